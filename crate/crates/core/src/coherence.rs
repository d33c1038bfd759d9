//! Coherence estimates from shot ensembles: characteristic-function means,
//! Ramsey fringes, exponential decay fits, postselection and erasure rates.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::SystemParams;
use crate::numeric::wrap_angle;
use crate::trajectory::{ShotRecord, ShotTrace, Snapshot};

/// Complex ensemble coherence with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherencePoint {
    pub value: Complex64,
    /// Jackknife standard error of the complex mean.
    pub std_err: f64,
    pub n_samples: usize,
}

impl CoherencePoint {
    /// Mean of complex samples, jackknife error
    /// `sqrt(sum |z - mean|^2 / (n (n - 1)))`.
    pub fn from_samples(samples: &[Complex64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::EmptyEnsemble("no samples".into()));
        }
        let mean = samples.iter().sum::<Complex64>() / n as f64;
        let std_err = if n > 1 {
            let ss: f64 = samples.iter().map(|z| (z - mean).norm_sqr()).sum();
            (ss / (n as f64 * (n - 1) as f64)).sqrt()
        } else {
            0.0
        };
        Ok(CoherencePoint { value: mean, std_err, n_samples: n })
    }

    pub fn abs(&self) -> f64 {
        self.value.norm()
    }

    pub fn arg(&self) -> f64 {
        self.value.arg()
    }

    fn scaled(self, factor: f64) -> Self {
        CoherencePoint { value: self.value * factor, std_err: self.std_err * factor, ..self }
    }
}

/// Deterministic attenuation from readout backaction and cavity photon loss
/// after `n_measurements` readouts over `duration`.
pub fn deterministic_factor(params: &SystemParams, n_measurements: usize, duration: f64) -> f64 {
    let loss = if params.t1_cavity.is_finite() { (-duration / (2.0 * params.t1_cavity)).exp() } else { 1.0 };
    params.c_ro.powi(n_measurements as i32) * loss
}

fn check_uniform(records: &[ShotRecord]) -> Result<(usize, f64)> {
    let first = records.first().ok_or_else(|| Error::EmptyEnsemble("no shot records".into()))?;
    if records
        .iter()
        .any(|r| r.duration != first.duration || r.n_measurements != first.n_measurements)
    {
        return Err(Error::input("records differ in duration or measurement count"));
    }
    Ok((first.n_measurements, first.duration))
}

fn phase_samples<'a>(thetas: impl Iterator<Item = &'a f64>) -> Vec<Complex64> {
    thetas.map(|&t| Complex64::from_polar(1.0, t)).collect()
}

/// Ensemble coherence `mean(exp(i theta_net))`, attenuated by readout
/// backaction and photon loss.
pub fn coherence_of(records: &[ShotRecord], params: &SystemParams) -> Result<CoherencePoint> {
    let (n, duration) = check_uniform(records)?;
    let point = CoherencePoint::from_samples(&phase_samples(records.iter().map(|r| &r.theta_net)))?;
    Ok(point.scaled(deterministic_factor(params, n, duration)))
}

/// Coherence over the records with exactly `k` detected excitations.
pub fn postselect(records: &[ShotRecord], params: &SystemParams, k: usize) -> Result<CoherencePoint> {
    let (n, duration) = check_uniform(records)?;
    let subset: Vec<Complex64> = phase_samples(records.iter().filter(|r| r.k_detected == k).map(|r| &r.theta_net));
    if subset.is_empty() {
        let max_k = records.iter().map(|r| r.k_detected).max().unwrap_or(0);
        return Err(Error::EmptyEnsemble(format!(
            "no records with k = {k} among {} shots (max k = {max_k})",
            records.len()
        )));
    }
    Ok(CoherencePoint::from_samples(&subset)?.scaled(deterministic_factor(params, n, duration)))
}

/// Frequency of each detected-excitation count, indexed by k.
pub fn k_histogram(records: &[ShotRecord]) -> Vec<usize> {
    let max_k = records.iter().map(|r| r.k_detected).max().unwrap_or(0);
    let mut hist = vec![0; max_k + 1];
    for r in records {
        hist[r.k_detected] += 1;
    }
    hist
}

/// Which shots enter a coherence estimate from traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    /// Only shots with no detection up to the time point.
    NoDetection,
}

/// Coherence versus time from checkpoint traces; point `i` uses
/// `snapshots[i]` at time `checkpoints[i] * t_m`.
pub fn coherence_series(
    traces: &[ShotTrace],
    checkpoints: &[usize],
    params: &SystemParams,
    selection: Selection,
) -> Result<Vec<(f64, CoherencePoint)>> {
    if traces.is_empty() {
        return Err(Error::EmptyEnsemble("no shot traces".into()));
    }
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let snaps: Vec<&Snapshot> = traces
                .iter()
                .map(|t| &t.snapshots[i])
                .filter(|s| selection == Selection::All || s.k_detected == 0)
                .collect();
            let samples = phase_samples(snaps.iter().map(|s| &s.theta));
            let point = CoherencePoint::from_samples(&samples)
                .map_err(|_| Error::EmptyEnsemble(format!("no surviving shots at checkpoint {c}")))?;
            let n_meas = snaps[0].n_measurements;
            let t = c as f64 * params.t_m;
            Ok((t, point.scaled(deterministic_factor(params, n_meas, t))))
        })
        .collect()
}

/// Ramsey probability `(1 + |c| cos(arg c - theta)) / 2`.
pub fn ramsey_probability(c: Complex64, theta: f64) -> Result<f64> {
    if !(c.norm() <= 1.0 + 1e-12) {
        return Err(Error::input(format!("|c| = {} exceeds 1", c.norm())));
    }
    Ok(0.5 * (1.0 + (c * Complex64::from_polar(1.0, -theta)).re))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FringeFit {
    pub magnitude: f64,
    /// In (-pi, pi]; meaningless when `phase_defined` is false.
    pub phase: f64,
    pub phase_defined: bool,
}

/// Least-squares fit of `2P - 1 = |C| cos(phase - theta)`.
pub fn fit_fringe(samples: &[(f64, f64)]) -> Result<FringeFit> {
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::input(format!("{} distinct phases, at least 4 required", distinct.len())));
    }
    if distinct[distinct.len() - 1] - distinct[0] < std::f64::consts::PI - 1e-9 {
        return Err(Error::input("fringe phases must span at least pi"));
    }
    let (mut scc, mut sss, mut scs, mut syc, mut sys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(theta, p) in samples {
        let (s, c) = theta.sin_cos();
        let y = 2.0 * p - 1.0;
        scc += c * c;
        sss += s * s;
        scs += c * s;
        syc += y * c;
        sys += y * s;
    }
    let det = scc * sss - scs * scs;
    if det.abs() <= 1e-12 * (scc * sss).max(1e-300) {
        return Err(Error::input("degenerate fringe design"));
    }
    let a = (syc * sss - sys * scs) / det;
    let b = (sys * scc - syc * scs) / det;
    let magnitude = a.hypot(b);
    let phase_defined = magnitude > 1e-9;
    let phase = if phase_defined { wrap_angle(b.atan2(a)) } else { 0.0 };
    Ok(FringeFit { magnitude, phase, phase_defined })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub t2: f64,
    pub t2_err: f64,
    pub amplitude: f64,
    /// `None` when decay is not faster than photon loss alone.
    pub tphi: Option<f64>,
    /// Tphi at the upper end of the decay-rate interval.
    pub tphi_lower: Option<f64>,
    /// Tphi at the lower end of the decay-rate interval; `None` if unbounded.
    pub tphi_upper: Option<f64>,
    pub photon_loss_limited: bool,
    pub n_points_used: usize,
}

/// Weighted fit of `|C|(t) = A exp(-t / T2)` on log scale, weights
/// `(|C| / err)^2`. Points with `|C| <= 2 err` are dropped. The interval on
/// the decay rate is where the profile chi-square rises by one.
pub fn fit_decay(series: &[(f64, CoherencePoint)], t1_cavity: f64) -> Result<DecayFit> {
    if series.len() < 3 {
        return Err(Error::input("at least three time points are required"));
    }
    if series.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::input("time points must be strictly increasing"));
    }
    let all_exact = series.iter().all(|(_, p)| p.std_err == 0.0);
    // A zero error from a finite ensemble only means no spread was observed.
    let floor = series.iter().map(|(_, p)| p.std_err).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64, f64)> = series
        .iter()
        .filter(|(_, p)| all_exact || p.abs() > 2.0 * p.std_err)
        .filter(|(_, p)| p.abs() > 0.0)
        .map(|(t, p)| {
            let w = if all_exact { 1.0 } else { (p.abs() / p.std_err.max(floor)).powi(2) };
            (*t, p.abs().ln(), w)
        })
        .collect();
    if pts.len() < 3 {
        return Err(Error::numerical("fewer than three points above the noise floor"));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let st = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let sy = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let stt: f64 = pts.iter().map(|p| p.2 * (p.0 - st).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::numerical("singular decay fit"));
    }
    let slope = pts.iter().map(|p| p.2 * (p.0 - st) * (p.1 - sy)).sum::<f64>() / stt;
    let intercept = sy - slope * st;
    let rate = -slope;
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::numerical(format!("fitted decay rate {rate} is not positive")));
    }
    let rate_err = if all_exact {
        let resid: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        let dof = (pts.len() - 2).max(1) as f64;
        (resid / dof / stt).sqrt()
    } else {
        (1.0 / stt).sqrt()
    };
    let t2 = 1.0 / rate;
    let loss = if t1_cavity.is_finite() { 1.0 / (2.0 * t1_cavity) } else { 0.0 };
    let tphi_of = |r: f64| if r > loss * (1.0 + 1e-9) { Some(1.0 / (r - loss)) } else { None };
    let tphi = tphi_of(rate);
    Ok(DecayFit {
        t2,
        t2_err: rate_err / (rate * rate),
        amplitude: intercept.exp(),
        tphi,
        tphi_lower: tphi_of(rate + rate_err),
        tphi_upper: tphi_of(rate - rate_err),
        photon_loss_limited: tphi.is_none(),
        n_points_used: pts.len(),
    })
}

/// Pure dephasing time from `T2` and the cavity energy relaxation time.
pub fn tphi_from_t2(t2: f64, t1_cavity: f64) -> Option<f64> {
    let r = 1.0 / t2 - 1.0 / (2.0 * t1_cavity);
    (r > 0.0).then(|| 1.0 / r)
}

/// Fraction of shots with no `E` readout up to each time.
pub fn survival_fraction(records: &[ShotRecord], t_m: f64, time_grid: &[f64]) -> Vec<(f64, f64)> {
    let first: Vec<Option<usize>> = records.iter().map(|r| r.first_detection()).collect();
    survival_from_first_detection(&first, t_m, time_grid)
}

/// Survival curve from first-detection cycle indices. A detection in cycle
/// `j` happens at `j * t_m + (t_m - t_g)`, within the cycle ending at
/// `(j + 1) t_m`; it counts as lost from that cycle end on.
pub fn survival_from_first_detection(first: &[Option<usize>], t_m: f64, time_grid: &[f64]) -> Vec<(f64, f64)> {
    let n = first.len().max(1) as f64;
    time_grid
        .iter()
        .map(|&t| {
            let cycles = ((t / t_m) * (1.0 + 1e-12)).floor() as usize;
            let lost = first.iter().filter(|f| matches!(f, Some(j) if j + 1 <= cycles)).count();
            (t, 1.0 - lost as f64 / n)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErasureEstimate {
    /// Detection rate (1/s).
    pub rate: f64,
    pub rate_err: f64,
    /// Per-cycle first-detection probability.
    pub per_cycle: f64,
    pub n_detected: usize,
    pub exposure_cycles: usize,
}

/// Maximum-likelihood erasure rate from right-censored geometric first
/// detection times; `rate = -ln(1 - q) / t_m`.
pub fn erasure_rate_mle(first: &[Option<usize>], n_cycles: usize, t_m: f64) -> Result<ErasureEstimate> {
    if first.is_empty() {
        return Err(Error::EmptyEnsemble("no shots".into()));
    }
    let mut detected = 0;
    let mut exposure = 0;
    for f in first {
        match f {
            Some(j) => {
                detected += 1;
                exposure += j + 1;
            }
            None => exposure += n_cycles,
        }
    }
    if detected == 0 {
        return Ok(ErasureEstimate { rate: 0.0, rate_err: 0.0, per_cycle: 0.0, n_detected: 0, exposure_cycles: exposure });
    }
    let q = detected as f64 / exposure as f64;
    if q >= 1.0 {
        return Err(Error::numerical("every shot detected in its first cycle"));
    }
    let rate = -(-q).ln_1p() / t_m;
    let rate_err = (q / ((1.0 - q) * exposure as f64)).sqrt() / t_m;
    Ok(ErasureEstimate { rate, rate_err, per_cycle: q, n_detected: detected, exposure_cycles: exposure })
}

/// Log-linear least-squares rate of a survival curve, ignoring zero entries.
pub fn fit_survival_rate(curve: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve.iter().filter(|p| p.1 > 0.0).map(|&(t, f)| (t, f.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::numerical("survival curve has fewer than two positive points"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::numerical("survival times coincide"));
    }
    Ok(-pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / stt)
}

pub fn write_decay_csv<W: Write>(out: W, series: &[(f64, CoherencePoint)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "abs_c", "err", "n_samples"]).map_err(csv_err)?;
    for (t, p) in series {
        w.write_record([fmt(*t), fmt(p.abs()), fmt(p.std_err), p.n_samples.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fringe_csv<W: Write>(out: W, samples: &[(f64, f64)]) -> Result<()> {
    write_pairs(out, ["theta", "p"], samples)
}

pub fn write_survival_csv<W: Write>(out: W, curve: &[(f64, f64)]) -> Result<()> {
    write_pairs(out, ["t", "fraction"], curve)
}

fn write_pairs<W: Write>(out: W, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for (a, b) in rows {
        w.write_record([fmt(*a), fmt(*b)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip representation, stable across platforms.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:e}")
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::sinc;
    use crate::trajectory::CycleRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, PI};

    fn record(theta: f64, k: usize, n: usize, t_m: f64) -> ShotRecord {
        ShotRecord {
            cycles: vec![],
            theta_net: theta,
            k_detected: k,
            erasure: k > 0,
            n_measurements: n,
            duration: n as f64 * t_m,
        }
    }

    fn lossless() -> SystemParams {
        SystemParams { c_ro: 1.0, t1_cavity: f64::INFINITY, ..SystemParams::idle() }
    }

    #[test]
    fn zero_phase_is_unit_coherence() {
        let recs = vec![record(0.0, 0, 10, 2.6e-6); 50];
        let c = coherence_of(&recs, &lossless()).unwrap();
        assert_eq!(c.value, Complex64::new(1.0, 0.0));
        assert_eq!(c.std_err, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let recs = vec![record(FRAC_PI_3, 0, 10, 2.6e-6); 7];
        let c = coherence_of(&recs, &lossless()).unwrap();
        assert!((c.value - Complex64::from_polar(1.0, FRAC_PI_3)).norm() < 1e-15);
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(matches!(coherence_of(&[], &lossless()), Err(Error::EmptyEnsemble(_))));
    }

    #[test]
    fn uniform_phase_gives_sinc() {
        let x: f64 = 2.0 * PI * 73.06e3 * 2.6e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let recs: Vec<ShotRecord> = (0..200_000).map(|_| record(x * rng.random::<f64>(), 1, 1, 2.6e-6)).collect();
        let c = coherence_of(&recs, &lossless()).unwrap();
        assert!((c.abs() - sinc(x / 2.0).abs()).abs() < 3.0 * c.std_err);
    }

    #[test]
    fn deterministic_factors_apply() {
        let p = SystemParams::idle();
        let n = 100;
        let recs = vec![record(0.0, 0, n, p.t_m); 3];
        let c = coherence_of(&recs, &p).unwrap();
        let expected = p.c_ro.powi(n as i32) * (-(n as f64) * p.t_m / (2.0 * p.t1_cavity)).exp();
        assert!((c.value.re - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn unequal_durations_rejected() {
        let recs = vec![record(0.0, 0, 10, 2.6e-6), record(0.0, 0, 11, 2.6e-6)];
        assert!(coherence_of(&recs, &lossless()).is_err());
    }

    #[test]
    fn postselection_total_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = SystemParams::idle();
        let recs: Vec<ShotRecord> =
            (0..5000).map(|_| record(rng.random::<f64>() * 6.0, rng.random_range(0..4), 40, p.t_m)).collect();
        let total = coherence_of(&recs, &p).unwrap().value;
        let hist = k_histogram(&recs);
        let mut recombined = Complex64::new(0.0, 0.0);
        for (k, &count) in hist.iter().enumerate() {
            if count > 0 {
                recombined += postselect(&recs, &p, k).unwrap().value * (count as f64 / recs.len() as f64);
            }
        }
        assert!((recombined - total).norm() < 1e-12);
        assert!(postselect(&recs, &p, 10).is_err());
    }

    #[test]
    fn ramsey_examples() {
        for theta in [0.0, 1.0, 4.0] {
            assert_eq!(ramsey_probability(Complex64::new(0.0, 0.0), theta).unwrap(), 0.5);
        }
        assert_eq!(ramsey_probability(Complex64::new(1.0, 0.0), 0.0).unwrap(), 1.0);
        let c = Complex64::from_polar(0.5, FRAC_PI_4);
        assert!((ramsey_probability(c, FRAC_PI_4).unwrap() - 0.75).abs() < 1e-15);
        assert!(ramsey_probability(Complex64::new(1.1, 0.0), 0.0).is_err());
    }

    #[test]
    fn fringe_exact_recovery() {
        let c = Complex64::from_polar(0.5, FRAC_PI_4);
        let samples: Vec<(f64, f64)> =
            [0.0, PI / 2.0, PI, 1.5 * PI].iter().map(|&t| (t, ramsey_probability(c, t).unwrap())).collect();
        let fit = fit_fringe(&samples).unwrap();
        assert!((fit.magnitude - 0.5).abs() < 1e-12);
        assert!((fit.phase - FRAC_PI_4).abs() < 1e-12);
        assert!(fit.phase_defined);
    }

    #[test]
    fn fringe_zero_coherence_flags_phase() {
        let samples: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * PI / 4.0, 0.5)).collect();
        let fit = fit_fringe(&samples).unwrap();
        assert_eq!(fit.magnitude, 0.0);
        assert!(!fit.phase_defined);
    }

    #[test]
    fn fringe_degenerate_rejected() {
        assert!(fit_fringe(&[(1.0, 0.5); 6]).is_err());
        let narrow: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.1, 0.5)).collect();
        assert!(fit_fringe(&narrow).is_err());
    }

    proptest! {
        #[test]
        fn fringe_inverts_ramsey(mag in 0.01f64..1.0, phase in -3.14f64..3.14) {
            let c = Complex64::from_polar(mag, phase);
            let samples: Vec<(f64, f64)> = (0..12)
                .map(|i| { let t = i as f64 * PI / 6.0; (t, ramsey_probability(c, t).unwrap()) })
                .collect();
            let fit = fit_fringe(&samples).unwrap();
            prop_assert!((fit.magnitude - mag).abs() < 1e-10);
            prop_assert!(wrap_angle(fit.phase - phase).abs() < 1e-8);
        }

        #[test]
        fn coherence_bounded(thetas in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let recs: Vec<ShotRecord> = thetas.iter().map(|&t| record(t, 0, 3, 1e-6)).collect();
            let c = coherence_of(&recs, &SystemParams::idle()).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
        }
    }

    fn exact_series(t2: f64, amp: f64) -> Vec<(f64, CoherencePoint)> {
        (0..10)
            .map(|i| {
                let t = i as f64 * 1e-3;
                let v = amp * (-t / t2).exp();
                (t, CoherencePoint { value: Complex64::new(v, 0.0), std_err: 0.0, n_samples: 1 })
            })
            .collect()
    }

    #[test]
    fn tphi_from_quoted_t2() {
        // 1 / (1/2.24 - 1/3.14) ms
        let fit = fit_decay(&exact_series(2.24e-3, 0.98), 1.57e-3).unwrap();
        assert!((fit.t2 - 2.24e-3).abs() < 1e-12);
        assert!((fit.amplitude - 0.98).abs() < 1e-12);
        let tphi = fit.tphi.unwrap();
        assert!((tphi - 7.815e-3).abs() < 0.01e-3, "{tphi}");
        assert!((7.4e-3..=8.0e-3).contains(&tphi));
    }

    #[test]
    fn zero_error_point_among_noisy_ones() {
        let mut s = exact_series(2.0e-3, 1.0);
        for (i, p) in s.iter_mut().enumerate() {
            p.1.std_err = if i == 0 { 0.0 } else { 1e-3 };
        }
        let fit = fit_decay(&s, f64::INFINITY).unwrap();
        assert!((fit.t2 - 2.0e-3).abs() < 1e-9);
    }

    #[test]
    fn photon_loss_limited() {
        let fit = fit_decay(&exact_series(2.0 * 1.57e-3, 1.0), 1.57e-3).unwrap();
        assert!(fit.tphi.is_none());
        assert!(fit.photon_loss_limited);
    }

    #[test]
    fn noisy_decay_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t2 = 3.0e-3;
        let n = 5000;
        let series: Vec<(f64, CoherencePoint)> = (1..=12)
            .map(|i| {
                let t = i as f64 * 0.5e-3;
                // Each shot's phase is +-phi with equal probability; mean cos = e^{-t/T2}.
                let target = (-t / t2).exp();
                let phi = target.acos();
                let samples: Vec<Complex64> = (0..n)
                    .map(|_| Complex64::from_polar(1.0, if rng.random::<bool>() { phi } else { -phi }))
                    .collect();
                (t, CoherencePoint::from_samples(&samples).unwrap())
            })
            .collect();
        let fit = fit_decay(&series, f64::INFINITY).unwrap();
        assert!((fit.t2 - t2).abs() < 3.0 * fit.t2_err + 1e-5, "{} +- {}", fit.t2, fit.t2_err);
        let (lo, hi) = (fit.tphi_lower.unwrap(), fit.tphi_upper.unwrap());
        assert!(lo < fit.tphi.unwrap() && fit.tphi.unwrap() < hi);
    }

    #[test]
    fn decay_fit_rejects_bad_input() {
        let s = exact_series(1e-3, 1.0);
        assert!(fit_decay(&s[..2], 1.0).is_err());
        let mut rev = s.clone();
        rev.reverse();
        assert!(fit_decay(&rev, 1.0).is_err());
    }

    #[test]
    fn survival_without_detections() {
        let recs = vec![record(0.0, 0, 10, 1e-6); 5];
        let curve = survival_fraction(&recs, 1e-6, &[0.0, 5e-6, 1e-5]);
        assert!(curve.iter().all(|p| p.1 == 1.0));
    }

    #[test]
    fn survival_counts_first_detection() {
        let mut rec = record(0.0, 1, 10, 1e-6);
        rec.cycles = (0..10)
            .map(|j| CycleRecord {
                occupation_time: 0.0,
                outcome: Some(if j == 3 { crate::trajectory::Outcome::E } else { crate::trajectory::Outcome::G }),
                true_state_at_detection: None,
                reset_applied: false,
                correction_applied: 0.0,
            })
            .collect();
        let curve = survival_fraction(&[rec], 1e-6, &[3e-6, 4e-6]);
        assert_eq!(curve, vec![(3e-6, 1.0), (4e-6, 0.0)]);
    }

    #[test]
    fn geometric_mle_recovers_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q: f64 = 0.002;
        let n_cycles = 1000;
        let first: Vec<Option<usize>> = (0..20_000)
            .map(|_| (0..n_cycles).find(|_| rng.random::<f64>() < q))
            .collect();
        let est = erasure_rate_mle(&first, n_cycles, 1.0).unwrap();
        let truth = -(-q).ln_1p();
        assert!((est.rate - truth).abs() < 3.0 * est.rate_err);
        let curve = survival_from_first_detection(&first, 1.0, &[0.0, 200.0, 400.0, 600.0, 800.0]);
        let fitted = fit_survival_rate(&curve).unwrap();
        assert!((fitted - truth).abs() < 0.05 * truth);
    }
}
