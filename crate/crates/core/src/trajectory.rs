//! Exact continuous-time simulation of the ancilla and the
//! measure/reset/phase-correction feedback loop.
//!
//! A protocol cycle has length `t_m`. Within each cycle the ancilla first
//! evolves freely for `t_m - t_g`, is then measured (instantaneously), evolves
//! for the gap `t_g`, and finally receives the conditional reset and phase
//! correction. The cavity accumulates phase `chi` per unit time spent in `E`
//! plus the offset `theta_0` for every measurement that finds the ancilla
//! excited.
//!
//! Cavity photon loss and readout-induced dephasing are deterministic factors
//! and are applied in [`crate::coherence`], not sampled here.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics;
use crate::coherence::CoherencePoint;
use crate::error::{Error, Result};
use crate::model::{AncillaState, SystemParams};

/// Measured ancilla label, serialized as 0 (g) or 1 (e).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    G,
    E,
}

impl Outcome {
    pub fn index(self) -> usize {
        match self {
            Outcome::G => 0,
            Outcome::E => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Outcome::G
        } else {
            Outcome::E
        }
    }

    pub fn is_excited(self) -> bool {
        self == Outcome::E
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> serde::Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match <u8 as serde::Deserialize>::deserialize(d)? {
            0 => Ok(Outcome::G),
            1 => Ok(Outcome::E),
            x => Err(serde::de::Error::custom(format!("outcome {x} is not 0 or 1"))),
        }
    }
}

impl From<AncillaState> for Outcome {
    fn from(s: AncillaState) -> Self {
        match s {
            AncillaState::G => Outcome::G,
            AncillaState::E => Outcome::E,
        }
    }
}

/// Result of free evolution over a time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub end: AncillaState,
    /// Time spent in `E` during the window.
    pub occupation: f64,
}

/// Samples an exact path of the two-state chain over `[0, dt]` by iterated
/// exponential holding times (rate `gamma_up` out of `G`, `gamma` out of `E`).
pub fn evolve_ctmc<R: Rng + ?Sized>(
    state: AncillaState,
    dt: f64,
    gamma_up: f64,
    gamma: f64,
    rng: &mut R,
) -> Segment {
    let mut state = state;
    let mut t = 0.0;
    let mut occupation = 0.0;
    loop {
        let rate = match state {
            AncillaState::G => gamma_up,
            AncillaState::E => gamma,
        };
        let hold = if rate > 0.0 {
            let e: f64 = Exp1.sample(rng);
            e / rate
        } else {
            f64::INFINITY
        };
        if t + hold >= dt {
            if state == AncillaState::E {
                occupation += dt - t;
            }
            return Segment { end: state, occupation };
        }
        if state == AncillaState::E {
            occupation += hold;
        }
        t += hold;
        state = state.flipped();
    }
}

/// Draws a readout label through the confusion matrix.
pub fn measure<R: Rng + ?Sized>(
    state: AncillaState,
    p_e_given_g: f64,
    p_g_given_e: f64,
    rng: &mut R,
) -> Outcome {
    let u: f64 = rng.random();
    match state {
        AncillaState::G if u < p_e_given_g => Outcome::E,
        AncillaState::G => Outcome::G,
        AncillaState::E if u < p_g_given_e => Outcome::G,
        AncillaState::E => Outcome::E,
    }
}

/// Source of ancilla dynamics and readout noise driving the protocol loop.
///
/// The stochastic implementation is [`StochasticAncilla`]; tests substitute
/// scripted processes to force specific events.
pub trait AncillaProcess {
    fn evolve(&mut self, state: AncillaState, dt: f64) -> Segment;
    fn measure(&mut self, state: AncillaState) -> Outcome;
}

pub struct StochasticAncilla<R> {
    rng: R,
    gamma_up: f64,
    gamma: f64,
    p_e_given_g: f64,
    p_g_given_e: f64,
}

impl<R: Rng> StochasticAncilla<R> {
    pub fn new(params: &SystemParams, rng: R) -> Self {
        StochasticAncilla {
            rng,
            gamma_up: params.gamma_up,
            gamma: params.gamma,
            p_e_given_g: params.p_e_given_g,
            p_g_given_e: params.p_g_given_e,
        }
    }
}

impl<R: Rng> AncillaProcess for StochasticAncilla<R> {
    fn evolve(&mut self, state: AncillaState, dt: f64) -> Segment {
        evolve_ctmc(state, dt, self.gamma_up, self.gamma, &mut self.rng)
    }

    fn measure(&mut self, state: AncillaState) -> Outcome {
        measure(state, self.p_e_given_g, self.p_g_given_e, &mut self.rng)
    }
}

/// One protocol cycle of length `t_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    /// Time spent in `E` during the cycle (s).
    pub occupation_time: f64,
    /// Readout label, `None` when the ancilla is not monitored.
    pub outcome: Option<Outcome>,
    pub true_state_at_detection: Option<AncillaState>,
    pub reset_applied: bool,
    /// Feedback phase added in this cycle, either 0 or the configured phase.
    pub correction_applied: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotRecord {
    pub cycles: Vec<CycleRecord>,
    /// Total cavity phase (rad).
    pub theta_net: f64,
    pub k_detected: usize,
    pub erasure: bool,
    pub n_measurements: usize,
    /// Simulated duration, a whole number of cycles (s).
    pub duration: f64,
}

impl ShotRecord {
    /// Index of the first cycle with an `E` readout.
    pub fn first_detection(&self) -> Option<usize> {
        self.cycles.iter().position(|c| c.outcome == Some(Outcome::E))
    }
}

/// Protocol switches for one shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolConfig {
    /// Total evolution time, rounded down to whole cycles of `t_m` (s).
    pub duration: f64,
    /// Measure the ancilla once per cycle. With monitoring off the ancilla
    /// idles and no readout factor applies.
    pub monitoring: bool,
    pub feedback_enabled: bool,
    pub reset_enabled: bool,
    pub rng_seed: u64,
}

impl ProtocolConfig {
    /// Free evolution, no measurements.
    pub fn idle(duration: f64, rng_seed: u64) -> Self {
        ProtocolConfig {
            duration,
            monitoring: false,
            feedback_enabled: false,
            reset_enabled: false,
            rng_seed,
        }
    }

    /// Measurement, conditional reset and phase correction every cycle.
    pub fn feedback(duration: f64, rng_seed: u64) -> Self {
        ProtocolConfig {
            duration,
            monitoring: true,
            feedback_enabled: true,
            reset_enabled: true,
            rng_seed,
        }
    }

    /// Measurement and reset without phase correction.
    pub fn reset_only(duration: f64, rng_seed: u64) -> Self {
        ProtocolConfig { feedback_enabled: false, ..Self::feedback(duration, rng_seed) }
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        ProtocolConfig { rng_seed, ..self }
    }

    pub fn n_cycles(&self, t_m: f64) -> usize {
        // Guard against 2.6e-6 * 1000 / 2.6e-6 = 999.9999...
        ((self.duration / t_m) * (1.0 + 1e-12)).floor() as usize
    }
}

/// Running protocol state visible to observers after each cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Snapshot {
    pub theta: f64,
    pub k_detected: usize,
    pub n_measurements: usize,
}

/// Core protocol loop. Calls `observe(cycle_index, &record, &running)` after
/// every cycle and returns the final running state.
pub fn simulate_protocol<P, F>(
    config: &ProtocolConfig,
    params: &SystemParams,
    theta_tilde: f64,
    process: &mut P,
    mut observe: F,
) -> Result<Snapshot>
where
    P: AncillaProcess + ?Sized,
    F: FnMut(usize, &CycleRecord, &Snapshot),
{
    let n_cycles = config.n_cycles(params.t_m);
    if n_cycles == 0 {
        return Err(Error::input(format!(
            "duration {} s is shorter than one measurement interval {} s",
            config.duration, params.t_m
        )));
    }
    let pre = params.t_m - params.t_g;
    let mut state = AncillaState::G;
    let mut running = Snapshot::default();
    for j in 0..n_cycles {
        let record = if config.monitoring {
            let first = process.evolve(state, pre);
            let detected_state = first.end;
            let outcome = process.measure(detected_state);
            if detected_state == AncillaState::E {
                running.theta += params.theta_0;
            }
            running.n_measurements += 1;
            let gap = process.evolve(detected_state, params.t_g);
            state = gap.end;
            let excited = outcome.is_excited();
            let reset_applied = excited && config.reset_enabled;
            if reset_applied {
                state = state.flipped();
            }
            let correction_applied = if excited && config.feedback_enabled { theta_tilde } else { 0.0 };
            if excited {
                running.k_detected += 1;
            }
            let occupation_time = first.occupation + gap.occupation;
            running.theta += params.chi * occupation_time + correction_applied;
            CycleRecord {
                occupation_time,
                outcome: Some(outcome),
                true_state_at_detection: Some(detected_state),
                reset_applied,
                correction_applied,
            }
        } else {
            let seg = process.evolve(state, params.t_m);
            state = seg.end;
            running.theta += params.chi * seg.occupation;
            CycleRecord {
                occupation_time: seg.occupation,
                outcome: None,
                true_state_at_detection: None,
                reset_applied: false,
                correction_applied: 0.0,
            }
        };
        observe(j, &record, &running);
    }
    Ok(running)
}

/// Feedback phase the simulator applies per detected excitation.
pub fn applied_feedback_phase(params: &SystemParams) -> f64 {
    analytics::resolve_feedback_phase(params)
}

/// Runs one shot with a process built from the shot's own seed.
pub fn run_shot(config: &ProtocolConfig, params: &SystemParams) -> Result<ShotRecord> {
    let mut process = StochasticAncilla::new(params, ChaCha8Rng::seed_from_u64(config.rng_seed));
    run_shot_with(config, params, applied_feedback_phase(params), &mut process)
}

/// Runs one shot against an arbitrary ancilla process.
pub fn run_shot_with<P: AncillaProcess + ?Sized>(
    config: &ProtocolConfig,
    params: &SystemParams,
    theta_tilde: f64,
    process: &mut P,
) -> Result<ShotRecord> {
    let mut cycles = Vec::with_capacity(config.n_cycles(params.t_m));
    let last = simulate_protocol(config, params, theta_tilde, process, |_, rec, _| cycles.push(*rec))?;
    let duration = cycles.len() as f64 * params.t_m;
    Ok(ShotRecord {
        cycles,
        theta_net: last.theta,
        k_detected: last.k_detected,
        erasure: last.k_detected > 0,
        n_measurements: last.n_measurements,
        duration,
    })
}

/// Derives the seed of shot `index` from the ensemble master seed.
pub fn shot_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n_shots` independent shots; shot `i` uses `shot_seed(master_seed, i)`.
/// Results are in shot order and do not depend on the worker count.
pub fn run_ensemble(
    config: &ProtocolConfig,
    params: &SystemParams,
    n_shots: usize,
    master_seed: u64,
) -> Result<Vec<ShotRecord>> {
    if n_shots == 0 {
        return Err(Error::input("n_shots must be at least 1"));
    }
    (0..n_shots as u64)
        .into_par_iter()
        .map(|i| run_shot(&config.with_seed(shot_seed(master_seed, i)), params))
        .collect()
}

/// Compact per-shot output for long runs: the running state at selected cycle
/// counts plus the first detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotTrace {
    /// Snapshot after `checkpoints[i]` cycles; checkpoint 0 is the initial state.
    pub snapshots: Vec<Snapshot>,
    pub first_detection: Option<usize>,
    pub n_cycles: usize,
}

pub fn run_shot_trace(
    config: &ProtocolConfig,
    params: &SystemParams,
    theta_tilde: f64,
    checkpoints: &[usize],
) -> Result<ShotTrace> {
    let mut process = StochasticAncilla::new(params, ChaCha8Rng::seed_from_u64(config.rng_seed));
    let mut snapshots = vec![Snapshot::default(); checkpoints.len()];
    let mut first_detection = None;
    let mut n_cycles = 0;
    simulate_protocol(config, params, theta_tilde, &mut process, |j, rec, running| {
        n_cycles = j + 1;
        if first_detection.is_none() && rec.outcome == Some(Outcome::E) {
            first_detection = Some(j);
        }
        for (slot, &c) in snapshots.iter_mut().zip(checkpoints) {
            if c == j + 1 {
                *slot = *running;
            }
        }
    })?;
    if let Some(&c) = checkpoints.iter().find(|&&c| c > n_cycles) {
        return Err(Error::input(format!("checkpoint {c} beyond the {n_cycles} simulated cycles")));
    }
    Ok(ShotTrace { snapshots, first_detection, n_cycles })
}

/// Ensemble of [`ShotTrace`]s, deterministic in `master_seed`.
pub fn run_ensemble_traces(
    config: &ProtocolConfig,
    params: &SystemParams,
    n_shots: usize,
    master_seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<ShotTrace>> {
    if n_shots == 0 {
        return Err(Error::input("n_shots must be at least 1"));
    }
    let theta_tilde = applied_feedback_phase(params);
    (0..n_shots as u64)
        .into_par_iter()
        .map(|i| run_shot_trace(&config.with_seed(shot_seed(master_seed, i)), params, theta_tilde, checkpoints))
        .collect()
}

/// One measurement interval conditioned on a single excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionedSample {
    pub occupation: f64,
    /// The excitation was still present at the detection instant.
    pub survived: bool,
    /// Probability of the conditioning event, `gamma_up * t_m`.
    pub weight: f64,
}

/// Samples an interval with exactly one excitation: the excitation instant is
/// uniform on `[0, t_m]` and then competes with decay at rate `gamma`.
pub fn run_conditioned_interval<R: Rng + ?Sized>(params: &SystemParams, rng: &mut R) -> ConditionedSample {
    let t_m = params.t_m;
    let start = t_m * rng.random::<f64>();
    let remaining = t_m - start;
    let decay = if params.gamma > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / params.gamma
    } else {
        f64::INFINITY
    };
    let weight = params.gamma_up * t_m;
    if decay >= remaining {
        ConditionedSample { occupation: remaining, survived: true, weight }
    } else {
        ConditionedSample { occupation: decay, survived: false, weight }
    }
}

/// How per-interval coherence is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SamplingMode {
    /// Plain simulation of single intervals starting in `G`.
    Direct,
    /// Rare-event estimator: only intervals with one excitation are sampled and
    /// reweighted by their probability.
    Conditioned,
}

/// Estimates the single-interval coherence of the ideal-readout protocol
/// (perfect detection, no gap, reset and feedback `theta_tilde` on detection).
pub fn interval_coherence(
    params: &SystemParams,
    theta_tilde: f64,
    n_samples: usize,
    master_seed: u64,
    mode: SamplingMode,
) -> Result<CoherencePoint> {
    if n_samples < 2 {
        return Err(Error::input("at least two samples are required"));
    }
    let correction = Complex64::from_polar(1.0, theta_tilde + params.theta_0);
    let draws = sample_parallel(n_samples, master_seed, |rng| match mode {
        SamplingMode::Direct => {
            let seg = evolve_ctmc(AncillaState::G, params.t_m, params.gamma_up, params.gamma, rng);
            let z = Complex64::from_polar(1.0, params.chi * seg.occupation);
            if seg.end == AncillaState::E {
                z * correction
            } else {
                z
            }
        }
        SamplingMode::Conditioned => {
            let s = run_conditioned_interval(params, rng);
            let z = Complex64::from_polar(1.0, params.chi * s.occupation);
            if s.survived {
                z * correction
            } else {
                z
            }
        }
    });
    let point = CoherencePoint::from_samples(&draws)?;
    Ok(match mode {
        SamplingMode::Direct => point,
        SamplingMode::Conditioned => {
            let w = params.gamma_up * params.t_m;
            CoherencePoint {
                value: Complex64::new(1.0 - w, 0.0) + point.value * w,
                std_err: point.std_err * w,
                n_samples: point.n_samples,
            }
        }
    })
}

/// Coherence samples `exp(i chi tau)` of excitations that survive to
/// detection, from the conditioned sampler.
pub fn conditioned_survivor_phases(params: &SystemParams, n_samples: usize, master_seed: u64) -> (Vec<Complex64>, usize) {
    let draws = sample_parallel(n_samples, master_seed, |rng| {
        let s = run_conditioned_interval(params, rng);
        (s.survived, params.chi * s.occupation)
    });
    let survivors: Vec<Complex64> = draws
        .iter()
        .filter(|(survived, _)| *survived)
        .map(|&(_, phase)| Complex64::from_polar(1.0, phase))
        .collect();
    let decayed = n_samples - survivors.len();
    (survivors, decayed)
}

/// Prepares `E`, evolves for `t_m`, and keeps runs found in `G` (perfect
/// readout). Returns the phase factors of the kept runs.
pub fn decay_conditioned_phases(params: &SystemParams, n_samples: usize, master_seed: u64) -> Vec<Complex64> {
    let draws = sample_parallel(n_samples, master_seed, |rng| {
        let seg = evolve_ctmc(AncillaState::E, params.t_m, params.gamma_up, params.gamma, rng);
        (seg.end, params.chi * seg.occupation)
    });
    draws
        .into_iter()
        .filter(|(end, _)| *end == AncillaState::G)
        .map(|(_, phase)| Complex64::from_polar(1.0, phase))
        .collect()
}

const BATCH: usize = 4096;

/// Deterministic parallel sampling: batch `b` owns ChaCha stream `b`.
fn sample_parallel<T, F>(n: usize, master_seed: u64, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let n_batches = n.div_ceil(BATCH);
    let batches: Vec<Vec<T>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(b as u64);
            let len = BATCH.min(n - b * BATCH);
            (0..len).map(|_| draw(&mut rng)).collect()
        })
        .collect();
    batches.into_iter().flatten().collect()
}
