//! Two-state hidden Markov model of the monitored ancilla: normalized
//! forward/backward recursions, smoothing, reconstruction, Baum-Welch, and an
//! exhaustive-enumeration oracle.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AncillaState;
use crate::trajectory::Outcome;

/// Physical parameters of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    /// Excitation rate (1/s).
    pub gamma_up: f64,
    /// Decay rate (1/s).
    pub gamma: f64,
}

impl HmmParams {
    /// Parameters of the reconstruction example: 6% / 14% confusion,
    /// 56 kHz decay, 10 kHz excitation.
    pub fn example() -> Self {
        HmmParams { p_e_given_g: 0.06, p_g_given_e: 0.14, gamma_up: 10e3, gamma: 56e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HmmModel {
    /// `transition[i][j]` = P(next = j | current = i), states G = 0, E = 1.
    pub transition: [[f64; 2]; 2],
    /// `emission[i][o]` = P(outcome o | state i).
    pub emission: [[f64; 2]; 2],
    pub initial: [f64; 2],
}

impl HmmModel {
    /// Model from per-step probabilities.
    pub fn from_probabilities(p_up: f64, p_down: f64, p_e_given_g: f64, p_g_given_e: f64, initial: Option<[f64; 2]>) -> Result<Self> {
        for (name, v) in [("p_up", p_up), ("p_down", p_down), ("p_e_given_g", p_e_given_g), ("p_g_given_e", p_g_given_e)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::input(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let transition = [[1.0 - p_up, p_up], [p_down, 1.0 - p_down]];
        let initial = match initial {
            Some(pi) => {
                if pi.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (pi[0] + pi[1] - 1.0).abs() > 1e-12 {
                    return Err(Error::input("initial distribution must be a probability vector"));
                }
                pi
            }
            None => stationary(&transition),
        };
        Ok(HmmModel {
            transition,
            emission: [[1.0 - p_e_given_g, p_e_given_g], [p_g_given_e, 1.0 - p_g_given_e]],
            initial,
        })
    }

    pub fn p_up(&self) -> f64 {
        self.transition[0][1]
    }

    pub fn p_down(&self) -> f64 {
        self.transition[1][0]
    }

    /// Maps per-step probabilities back to rates for interval `t_m`.
    pub fn to_params(&self, t_m: f64) -> HmmParams {
        HmmParams {
            p_e_given_g: self.emission[0][1],
            p_g_given_e: self.emission[1][0],
            gamma_up: self.p_up() / t_m,
            gamma: -(-self.p_down()).ln_1p() / t_m,
        }
    }
}

fn stationary(t: &[[f64; 2]; 2]) -> [f64; 2] {
    let (up, down) = (t[0][1], t[1][0]);
    if up + down == 0.0 {
        [1.0, 0.0]
    } else {
        [down / (up + down), up / (up + down)]
    }
}

/// Builds the chain for interval `t_m`: `p_up = gamma_up t_m`,
/// `p_down = 1 - exp(-gamma t_m)`. Defaults to the stationary distribution.
pub fn build_model(lambda: &HmmParams, t_m: f64, initial: Option<[f64; 2]>) -> Result<HmmModel> {
    if !(t_m > 0.0 && t_m.is_finite()) {
        return Err(Error::input("t_m must be positive"));
    }
    if !(lambda.gamma_up >= 0.0 && lambda.gamma >= 0.0) || !lambda.gamma_up.is_finite() || !lambda.gamma.is_finite() {
        return Err(Error::input("rates must be non-negative and finite"));
    }
    let p_up = lambda.gamma_up * t_m;
    if p_up >= 1.0 {
        return Err(Error::input(format!("gamma_up * t_m = {p_up} must be below 1")));
    }
    HmmModel::from_probabilities(p_up, -(-lambda.gamma * t_m).exp_m1(), lambda.p_e_given_g, lambda.p_g_given_e, initial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub outcomes: Vec<Outcome>,
    pub t_m: f64,
}

fn check_obs(obs: &[Outcome]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::input("empty observation sequence"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `filtered[k]` is the normalized forward vector after observation `k`.
    pub filtered: Vec<[f64; 2]>,
    pub normalizers: Vec<f64>,
    pub log_likelihood: f64,
}

fn predict(model: &HmmModel, prev: &[f64; 2]) -> [f64; 2] {
    let t = &model.transition;
    [prev[0] * t[0][0] + prev[1] * t[1][0], prev[0] * t[0][1] + prev[1] * t[1][1]]
}

/// Normalized forward recursion; the transition precedes every observation.
pub fn forward(obs: &[Outcome], model: &HmmModel) -> Result<ForwardPass> {
    check_obs(obs)?;
    let mut filtered = Vec::with_capacity(obs.len());
    let mut normalizers = Vec::with_capacity(obs.len());
    let mut log_likelihood = 0.0;
    let mut f = model.initial;
    for (k, o) in obs.iter().enumerate() {
        let pred = predict(model, &f);
        let o = o.index();
        let un = [pred[0] * model.emission[0][o], pred[1] * model.emission[1][o]];
        let c = un[0] + un[1];
        if !(c > 0.0) {
            return Err(Error::ZeroProbability { step: k });
        }
        f = [un[0] / c, un[1] / c];
        log_likelihood += c.ln();
        filtered.push(f);
        normalizers.push(c);
    }
    Ok(ForwardPass { filtered, normalizers, log_likelihood })
}

/// Streaming log-likelihood without storing the forward vectors.
pub fn log_likelihood(obs: &[Outcome], model: &HmmModel) -> Result<f64> {
    check_obs(obs)?;
    let mut f = model.initial;
    let mut ll = 0.0;
    for (k, o) in obs.iter().enumerate() {
        let pred = predict(model, &f);
        let o = o.index();
        let un = [pred[0] * model.emission[0][o], pred[1] * model.emission[1][o]];
        let c = un[0] + un[1];
        if !(c > 0.0) {
            return Err(Error::ZeroProbability { step: k });
        }
        f = [un[0] / c, un[1] / c];
        ll += c.ln();
    }
    Ok(ll)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    /// Backward vectors scaled by the forward normalizers of later steps.
    pub scaled: Vec<[f64; 2]>,
    /// Likelihood from the backward recursion with its own normalization.
    pub log_likelihood: f64,
}

/// Backward recursion. `scaled[k] = b(k) / prod_{s>k} c_s`, `b(N) = (1, 1)`.
pub fn backward(obs: &[Outcome], model: &HmmModel, normalizers: &[f64]) -> Result<BackwardPass> {
    check_obs(obs)?;
    let n = obs.len();
    if normalizers.len() != n {
        return Err(Error::input("normalizer count differs from observation count"));
    }
    let t = &model.transition;
    let m = &model.emission;
    let step = |next: &[f64; 2], o: usize| {
        let w = [m[0][o] * next[0], m[1][o] * next[1]];
        [t[0][0] * w[0] + t[0][1] * w[1], t[1][0] * w[0] + t[1][1] * w[1]]
    };
    let mut scaled = vec![[1.0, 1.0]; n];
    let mut own = [1.0, 1.0];
    let mut own_log = 0.0;
    for k in (0..n - 1).rev() {
        let o = obs[k + 1].index();
        let b = step(&scaled[k + 1], o);
        scaled[k] = [b[0] / normalizers[k + 1], b[1] / normalizers[k + 1]];
        let r = step(&own, o);
        let d = r[0] + r[1];
        if !(d > 0.0) {
            return Err(Error::ZeroProbability { step: k + 1 });
        }
        own = [r[0] / d, r[1] / d];
        own_log += d.ln();
    }
    let first = step(&own, obs[0].index());
    let total = model.initial[0] * first[0] + model.initial[1] * first[1];
    if !(total > 0.0) {
        return Err(Error::ZeroProbability { step: 0 });
    }
    Ok(BackwardPass { scaled, log_likelihood: own_log + total.ln() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult {
    pub log_likelihood: f64,
    /// Posterior state distribution at each step given all observations.
    pub smoothed: Vec<[f64; 2]>,
    pub normalizers: Vec<f64>,
}

pub fn smooth(obs: &[Outcome], model: &HmmModel) -> Result<InferenceResult> {
    let fw = forward(obs, model)?;
    let bw = backward(obs, model, &fw.normalizers)?;
    let smoothed = fw
        .filtered
        .iter()
        .zip(&bw.scaled)
        .map(|(f, b)| [f[0] * b[0], f[1] * b[1]])
        .collect();
    Ok(InferenceResult { log_likelihood: fw.log_likelihood, smoothed, normalizers: fw.normalizers })
}

/// Per-step most probable state; ties go to `G`.
pub fn reconstruct(obs: &[Outcome], model: &HmmModel) -> Result<Vec<AncillaState>> {
    Ok(argmax_states(&smooth(obs, model)?.smoothed))
}

pub fn argmax_states(smoothed: &[[f64; 2]]) -> Vec<AncillaState> {
    smoothed
        .iter()
        .map(|w| if w[1] > w[0] { AncillaState::E } else { AncillaState::G })
        .collect()
}

pub const BRUTE_FORCE_MAX_LEN: usize = 20;

/// Exact likelihood and posterior marginals by enumerating all hidden paths.
pub fn brute_force_posterior(obs: &[Outcome], model: &HmmModel) -> Result<(f64, Vec<[f64; 2]>)> {
    check_obs(obs)?;
    let n = obs.len();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(Error::input(format!("sequence length {n} exceeds {BRUTE_FORCE_MAX_LEN}")));
    }
    let prior = predict(model, &model.initial);
    let mut total = 0.0;
    let mut marginals = vec![[0.0; 2]; n];
    for path in 0u32..(1 << n) {
        let state = |k: usize| ((path >> k) & 1) as usize;
        let mut w = prior[state(0)] * model.emission[state(0)][obs[0].index()];
        for k in 1..n {
            w *= model.transition[state(k - 1)][state(k)] * model.emission[state(k)][obs[k].index()];
        }
        total += w;
        for (k, m) in marginals.iter_mut().enumerate() {
            m[state(k)] += w;
        }
    }
    if total > 0.0 {
        for m in &mut marginals {
            m[0] /= total;
            m[1] /= total;
        }
    }
    Ok((total, marginals))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchOptions {
    pub max_iter: usize,
    /// Stop when the log-likelihood gain falls below this.
    pub tol: f64,
    /// Re-estimate the initial distribution; otherwise it stays at the
    /// initial guess's stationary distribution.
    pub estimate_initial: bool,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        BaumWelchOptions { max_iter: 500, tol: 1e-6, estimate_initial: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaumWelchResult {
    pub model: HmmModel,
    pub params: HmmParams,
    /// Log-likelihood of each visited model, starting with the initial guess.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
}

/// One EM update. Returns the new model and the log-likelihood of `model`.
pub fn baum_welch_step(obs: &[Outcome], model: &HmmModel, estimate_initial: bool) -> Result<(HmmModel, f64)> {
    let fw = forward(obs, model)?;
    let bw = backward(obs, model, &fw.normalizers)?;
    let t = &model.transition;
    let m = &model.emission;
    let mut trans = [[0.0; 2]; 2];
    let mut emit = [[0.0; 2]; 2];
    let mut prev = model.initial;
    let mut first_state = [0.0; 2];
    for k in 0..obs.len() {
        let o = obs[k].index();
        let b = bw.scaled[k];
        let c = fw.normalizers[k];
        for i in 0..2 {
            for j in 0..2 {
                let xi = prev[i] * t[i][j] * m[j][o] * b[j] / c;
                trans[i][j] += xi;
                if k == 0 {
                    first_state[i] += xi;
                }
            }
        }
        let f = fw.filtered[k];
        emit[0][o] += f[0] * b[0];
        emit[1][o] += f[1] * b[1];
        prev = f;
    }
    let norm_row = |row: [f64; 2], fallback: [f64; 2]| {
        let s = row[0] + row[1];
        if s > 0.0 {
            [row[0] / s, row[1] / s]
        } else {
            fallback
        }
    };
    let transition = [norm_row(trans[0], t[0]), norm_row(trans[1], t[1])];
    let emission = [norm_row(emit[0], m[0]), norm_row(emit[1], m[1])];
    let initial = if estimate_initial { norm_row(first_state, model.initial) } else { model.initial };
    if transition.iter().chain(&emission).flatten().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite Baum-Welch update"));
    }
    Ok((HmmModel { transition, emission, initial }, fw.log_likelihood))
}

/// Expectation-maximization fit of transition and emission probabilities.
pub fn baum_welch(obs: &[Outcome], initial_guess: &HmmModel, t_m: f64, opts: BaumWelchOptions) -> Result<BaumWelchResult> {
    check_obs(obs)?;
    let mut model = HmmModel { initial: stationary(&initial_guess.transition), ..*initial_guess };
    if opts.estimate_initial {
        model.initial = initial_guess.initial;
    }
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (next, ll) = baum_welch_step(obs, &model, opts.estimate_initial)?;
        if !ll.is_finite() {
            return Err(Error::numerical("non-finite log-likelihood"));
        }
        if let Some(&last) = trace.last() {
            if ll - last < opts.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        model = next;
    }
    if !converged {
        trace.push(log_likelihood(obs, &model)?);
    }
    Ok(BaumWelchResult { params: model.to_params(t_m), model, log_likelihood_trace: trace, converged })
}

/// Hidden states and observations drawn from the discrete chain.
pub fn simulate_observations(model: &HmmModel, n: usize, seed: u64) -> (Vec<AncillaState>, Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = if rng.random::<f64>() < model.initial[1] { 1 } else { 0 };
    let mut states = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        state = if rng.random::<f64>() < model.transition[state][1] { 1 } else { 0 };
        let o = if rng.random::<f64>() < model.emission[state][1] { 1 } else { 0 };
        states.push(AncillaState::from_index(state));
        obs.push(Outcome::from_index(o));
    }
    (states, obs)
}

/// Reads one 0/1 outcome per line; blank lines and `#` comments are skipped.
pub fn read_text<R: BufRead>(input: R) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        out.push(match s {
            "0" => Outcome::G,
            "1" => Outcome::E,
            _ => return Err(Error::input(format!("line {}: expected 0 or 1, got {s:?}", i + 1))),
        });
    }
    check_obs(&out)?;
    Ok(out)
}

pub fn write_text<W: Write>(mut out: W, obs: &[Outcome]) -> Result<()> {
    for o in obs {
        writeln!(out, "{}", o.index())?;
    }
    Ok(())
}

/// Run-length encoded record: `runs` holds `[outcome, length]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleRecord {
    pub t_m: f64,
    pub runs: Vec<(u8, u64)>,
}

impl RleRecord {
    pub fn encode(obs: &[Outcome], t_m: f64) -> Self {
        let mut runs: Vec<(u8, u64)> = Vec::new();
        for o in obs {
            let v = o.index() as u8;
            match runs.last_mut() {
                Some((last, len)) if *last == v => *len += 1,
                _ => runs.push((v, 1)),
            }
        }
        RleRecord { t_m, runs }
    }

    pub fn decode(&self) -> Result<ObservationRecord> {
        let mut outcomes = Vec::new();
        for &(v, len) in &self.runs {
            let o = match v {
                0 => Outcome::G,
                1 => Outcome::E,
                _ => return Err(Error::input(format!("run value {v} is not 0 or 1"))),
            };
            outcomes.extend(std::iter::repeat_n(o, len as usize));
        }
        check_obs(&outcomes)?;
        Ok(ObservationRecord { outcomes, t_m: self.t_m })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedParams {
    pub p_up: f64,
    pub p_down: f64,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    pub gamma_up: f64,
    pub gamma: f64,
    pub t_m: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl FittedParams {
    pub fn from_result(r: &BaumWelchResult, t_m: f64) -> Self {
        FittedParams {
            p_up: r.model.p_up(),
            p_down: r.model.p_down(),
            p_e_given_g: r.params.p_e_given_g,
            p_g_given_e: r.params.p_g_given_e,
            gamma_up: r.params.gamma_up,
            gamma: r.params.gamma,
            t_m,
            log_likelihood: *r.log_likelihood_trace.last().unwrap_or(&f64::NAN),
            iterations: r.log_likelihood_trace.len().saturating_sub(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const T_M: f64 = 2.6e-6;

    fn obs_from(bits: &[u8]) -> Vec<Outcome> {
        bits.iter().map(|&b| Outcome::from_index(b as usize)).collect()
    }

    fn example_model() -> HmmModel {
        build_model(&HmmParams::example(), T_M, None).unwrap()
    }

    #[test]
    fn example_transition_probabilities() {
        let m = example_model();
        assert!((m.p_up() - 0.026).abs() < 1e-15);
        assert!((m.p_down() - (1.0 - (-0.1456f64).exp())).abs() < 1e-15);
        assert!((m.p_down() - 0.1355).abs() < 1e-4);
        for row in m.transition.iter().chain(&m.emission) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_heating_row() {
        let m = build_model(&HmmParams { gamma_up: 0.0, ..HmmParams::example() }, T_M, None).unwrap();
        assert_eq!(m.transition[0], [1.0, 0.0]);
    }

    #[test]
    fn default_initial_is_stationary() {
        let m = example_model();
        let next = predict(&m, &m.initial);
        assert!((next[0] - m.initial[0]).abs() < 1e-15 && (next[1] - m.initial[1]).abs() < 1e-15);
    }

    #[test]
    fn heating_per_step_must_be_below_one() {
        assert!(build_model(&HmmParams { gamma_up: 1.0 / T_M, ..HmmParams::example() }, T_M, None).is_err());
    }

    fn perfect(p_up: f64, p_down: f64, initial: Option<[f64; 2]>) -> HmmModel {
        HmmModel::from_probabilities(p_up, p_down, 0.0, 0.0, initial).unwrap()
    }

    #[test]
    fn one_step_forward() {
        let m = perfect(0.1, 0.3, Some([1.0, 0.0]));
        let fw = forward(&obs_from(&[0]), &m).unwrap();
        assert_eq!(fw.filtered[0], [1.0, 0.0]);
        assert!((fw.normalizers[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn uninformative_emission() {
        let m = HmmModel::from_probabilities(0.1, 0.3, 0.5, 0.5, Some([1.0, 0.0])).unwrap();
        let obs = obs_from(&[0, 1, 1, 0, 1]);
        let fw = forward(&obs, &m).unwrap();
        assert!((fw.log_likelihood - 5.0 * 0.5f64.ln()).abs() < 1e-12);
        let mut prior = m.initial;
        for f in &fw.filtered {
            prior = predict(&m, &prior);
            assert!((f[0] - prior[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_probability_step_reported() {
        let m = perfect(0.0, 0.3, Some([1.0, 0.0]));
        match forward(&obs_from(&[0, 0, 1]), &m) {
            Err(Error::ZeroProbability { step }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_step_backward_boundary() {
        let bw = backward(&obs_from(&[1]), &example_model(), &[0.5]).unwrap();
        assert_eq!(bw.scaled, vec![[1.0, 1.0]]);
    }

    #[test]
    fn perfect_emission_smoothing_and_reconstruction() {
        let m = perfect(0.05, 0.2, None);
        let obs = obs_from(&[0, 0, 1, 1, 0, 1]);
        let r = smooth(&obs, &m).unwrap();
        for (w, o) in r.smoothed.iter().zip(&obs) {
            assert!((w[o.index()] - 1.0).abs() < 1e-12);
        }
        let states = reconstruct(&obs, &m).unwrap();
        assert!(states.iter().zip(&obs).all(|(s, o)| s.index() == o.index()));
        let (_, post) = brute_force_posterior(&obs_from(&[1]), &m).unwrap();
        assert_eq!(post[0], [0.0, 1.0]);
    }

    #[test]
    fn brute_force_length_limit() {
        assert!(brute_force_posterior(&vec![Outcome::G; 21], &example_model()).is_err());
        assert!(brute_force_posterior(&vec![Outcome::G; 20], &example_model()).is_ok());
    }

    fn random_model(rng: &mut ChaCha8Rng) -> HmmModel {
        let mut p = || 0.01 + 0.98 * rng.random::<f64>();
        let (a, b, c, d, e) = (p(), p(), p(), p(), p());
        HmmModel::from_probabilities(a, b, c, d, Some([e, 1.0 - e])).unwrap()
    }

    #[test]
    fn three_step_likelihood_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_model(&mut rng);
            let obs: Vec<Outcome> = (0..3).map(|_| Outcome::from_index(rng.random_range(0..2))).collect();
            let (lik, _) = brute_force_posterior(&obs, &m).unwrap();
            let fw = forward(&obs, &m).unwrap();
            assert!((fw.log_likelihood.exp() - lik).abs() < 1e-12 * lik);
        }
    }

    proptest! {
        #[test]
        fn smoothing_matches_enumeration(seed in 0u64..10_000, n in 1usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng);
            let obs: Vec<Outcome> = (0..n).map(|_| Outcome::from_index(rng.random_range(0..2))).collect();
            let r = smooth(&obs, &m).unwrap();
            let (lik, post) = brute_force_posterior(&obs, &m).unwrap();
            prop_assert!((r.log_likelihood - lik.ln()).abs() < 1e-10);
            let bw = backward(&obs, &m, &r.normalizers).unwrap();
            prop_assert!((bw.log_likelihood - r.log_likelihood).abs() < 1e-10 * r.log_likelihood.abs().max(1.0));
            for (w, b) in r.smoothed.iter().zip(&post) {
                prop_assert!((w[0] + w[1] - 1.0).abs() < 1e-10);
                prop_assert!((w[0] - b[0]).abs() < 1e-10 && (w[1] - b[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn long_sequence_is_stable() {
        let m = example_model();
        let (_, obs) = simulate_observations(&m, 2_000_000, 1);
        let r = smooth(&obs, &m).unwrap();
        assert!(r.log_likelihood.is_finite());
        let bw = backward(&obs, &m, &r.normalizers).unwrap();
        assert!((bw.log_likelihood - r.log_likelihood).abs() < 1e-10 * r.log_likelihood.abs());
        assert!(r.smoothed.iter().all(|w| (w[0] + w[1] - 1.0).abs() < 1e-10));
        assert_eq!(log_likelihood(&obs, &m).unwrap(), r.log_likelihood);
    }

    #[test]
    fn isolated_false_positive_explained() {
        let m = example_model();
        let mut bits = vec![0u8; 60];
        bits[30] = 1;
        let r = smooth(&obs_from(&bits), &m).unwrap();
        assert!(r.smoothed[30][0] > r.smoothed[30][1]);
    }

    #[test]
    fn reconstruction_scenario() {
        let m = example_model();
        let mut bits = vec![0u8; 120];
        for i in [10, 25, 95] {
            bits[i] = 1;
        }
        for b in bits.iter_mut().take(62).skip(45) {
            *b = 1;
        }
        bits[53] = 0;
        let states = reconstruct(&obs_from(&bits), &m).unwrap();
        for i in [10, 25, 95] {
            assert_eq!(states[i], AncillaState::G, "step {i}");
        }
        assert_eq!(states[53], AncillaState::E);
        assert!((46..61).all(|i| states[i] == AncillaState::E));
    }

    #[test]
    fn argmax_invariant_under_scaling() {
        let w = vec![[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]];
        let scaled: Vec<[f64; 2]> = w.iter().map(|r| [r[0] * 3.7, r[1] * 3.7]).collect();
        assert_eq!(argmax_states(&w), argmax_states(&scaled));
        assert_eq!(argmax_states(&w)[1], AncillaState::G);
    }

    #[test]
    fn em_is_monotone_and_stochastic() {
        let truth = example_model();
        let (_, obs) = simulate_observations(&truth, 20_000, 3);
        let guess = HmmModel::from_probabilities(0.05, 0.3, 0.1, 0.05, None).unwrap();
        for estimate_initial in [false, true] {
            let opts = BaumWelchOptions { max_iter: 200, tol: 1e-9, estimate_initial };
            let r = baum_welch(&obs, &guess, T_M, opts).unwrap();
            for w in r.log_likelihood_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
            for row in r.model.transition.iter().chain(&r.model.emission) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn truth_is_near_fixed_point() {
        let truth = example_model();
        let (_, obs) = simulate_observations(&truth, 200_000, 4);
        let (next, ll0) = baum_welch_step(&obs, &truth, false).unwrap();
        let ll1 = log_likelihood(&obs, &next).unwrap();
        assert!(ll1 >= ll0);
        assert!((next.p_up() - truth.p_up()).abs() < 0.1 * truth.p_up());
        assert!((next.emission[0][1] - truth.emission[0][1]).abs() < 0.1 * truth.emission[0][1]);
    }

    #[test]
    fn empty_observations_rejected() {
        let m = example_model();
        assert!(forward(&[], &m).is_err());
        assert!(baum_welch(&[], &m, T_M, BaumWelchOptions::default()).is_err());
    }

    #[test]
    fn text_and_rle_round_trip() {
        let (_, obs) = simulate_observations(&example_model(), 500, 9);
        let mut buf = Vec::new();
        write_text(&mut buf, &obs).unwrap();
        assert_eq!(read_text(buf.as_slice()).unwrap(), obs);
        let rle = RleRecord::encode(&obs, T_M);
        let json = serde_json::to_string(&rle).unwrap();
        let back: RleRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.decode().unwrap().outcomes, obs);
        assert!(read_text("0\n2\n".as_bytes()).is_err());
    }
}
