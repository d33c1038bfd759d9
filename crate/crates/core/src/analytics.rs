//! Closed-form dephasing rates, single-interval coherences, the seven-event
//! budget of the feedback protocol with imperfect readout, and the feedback
//! phase and decision-boundary optimizers built on it.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::coherence::{csv_err, fmt};
use crate::error::Result;
use crate::model::{FeedbackPhase, SystemParams};
use crate::numeric::{early_decay_density, exp_ratio1, exp_ratio2, relax_fraction, sinc, wrap_angle};

/// Dephasing rate from thermal excitations without measurement:
/// `gamma_up chi^2 / (chi^2 + gamma^2)`.
pub fn dephasing_idle(params: &SystemParams) -> f64 {
    let (c2, g2) = (params.chi * params.chi, params.gamma * params.gamma);
    if c2 == 0.0 {
        return 0.0;
    }
    params.gamma_up * c2 / (c2 + g2)
}

/// Coherence of a single undecayed excitation starting uniformly within the
/// interval, as `(magnitude, phase)` with phase `(chi t_m / 2 mod pi) + theta_0`.
pub fn single_excitation_coherence_no_decay(chi: f64, t_m: f64, theta_0: f64) -> (f64, f64) {
    let half = chi * t_m / 2.0;
    (sinc(half).abs(), half.rem_euclid(PI) + theta_0)
}

fn z_t(params: &SystemParams) -> Complex64 {
    Complex64::new(-params.gamma, params.chi) * params.t_m
}

/// Coherence of an excitation that survives to the end of the interval,
/// before any feedback or offset phase.
fn survivor_coherence(params: &SystemParams) -> Complex64 {
    exp_ratio1(z_t(params)) / relax_fraction(params.gamma * params.t_m)
}

/// Probability of an excitation within `t_m` that survives to detection, and
/// its coherence including feedback `theta_tilde` and offset `theta_0`.
pub fn event1_coherence(params: &SystemParams, theta_tilde: f64) -> (f64, Complex64) {
    let p1 = params.gamma_up * params.t_m * relax_fraction(params.gamma * params.t_m);
    (p1, survivor_coherence(params) * Complex64::from_polar(1.0, theta_tilde + params.theta_0))
}

/// Probability of an excitation that decays before detection, and its
/// coherence (no feedback).
pub fn event2_coherence(params: &SystemParams) -> (f64, Complex64) {
    let x = params.gamma * params.t_m;
    let p2 = params.gamma_up * params.t_m * x * early_decay_density(x);
    (p2, exp_ratio2(z_t(params)) / early_decay_density(x))
}

/// Dephasing with ideal detection, reset and optimal phase correction:
/// `gamma_up (1 - |sinc(chi t_m / 2)|)`.
pub fn dephasing_feedback_ideal(params: &SystemParams) -> f64 {
    params.gamma_up * (1.0 - sinc(params.chi * params.t_m / 2.0).abs())
}

/// As [`dephasing_feedback_ideal`] without phase correction:
/// `gamma_up (1 - sinc(chi t_m))`.
pub fn dephasing_no_phase_correction(params: &SystemParams) -> f64 {
    params.gamma_up * (1.0 - sinc(params.chi * params.t_m))
}

/// Coherence after preparing `E` and finding `G` after `t_m`.
pub fn decay_conditioned_coherence(params: &SystemParams) -> Complex64 {
    survivor_coherence(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EventLabel {
    #[serde(rename = "0a")]
    E0a,
    #[serde(rename = "0b")]
    E0b,
    #[serde(rename = "1a")]
    E1a,
    #[serde(rename = "1b")]
    E1b,
    #[serde(rename = "1c")]
    E1c,
    #[serde(rename = "2a")]
    E2a,
    #[serde(rename = "2b")]
    E2b,
}

impl EventLabel {
    pub const ALL: [EventLabel; 7] = [
        EventLabel::E0a,
        EventLabel::E0b,
        EventLabel::E1a,
        EventLabel::E1b,
        EventLabel::E1c,
        EventLabel::E2a,
        EventLabel::E2b,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventLabel::E0a => "0a",
            EventLabel::E0b => "0b",
            EventLabel::E1a => "1a",
            EventLabel::E1b => "1b",
            EventLabel::E1c => "1c",
            EventLabel::E2a => "2a",
            EventLabel::E2b => "2b",
        }
    }

    /// Events with no detected excitation.
    pub fn is_postselected(self) -> bool {
        matches!(self, EventLabel::E0a | EventLabel::E2a)
    }
}

impl std::fmt::Display for EventLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One event class of a measurement interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventTerm {
    pub label: EventLabel,
    pub probability: f64,
    /// Coherence with the feedback phase applied.
    pub coherence: Complex64,
    /// Number of feedback phases the event collects.
    pub alpha: u32,
    /// Coherence without feedback.
    pub zero_feedback: Complex64,
    /// Phase of `zero_feedback` (rad).
    pub theta_i0: f64,
    /// Contribution `p (1 - Re C) / t_m` (1/s).
    pub dephasing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub theta_tilde: f64,
    pub terms: Vec<EventTerm>,
    pub total_rate: f64,
    pub total_tphi: f64,
    /// Rate of observed detections in the absence of cavity dynamics (1/s).
    pub erasure_rate: f64,
    /// Rate remaining after postselecting on no detections (1/s).
    pub postselected_rate: f64,
}

impl BudgetReport {
    pub fn term(&self, label: EventLabel) -> &EventTerm {
        self.terms.iter().find(|t| t.label == label).expect("all labels present")
    }

    pub fn probability_sum(&self) -> f64 {
        self.terms.iter().map(|t| t.probability).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "p", "abs_c", "arg_c", "rate", "tphi"]).map_err(csv_err)?;
        for t in &self.terms {
            w.write_record([
                t.label.as_str().to_string(),
                fmt(t.probability),
                fmt(t.coherence.norm()),
                fmt(t.coherence.arg()),
                fmt(t.dephasing_rate),
                fmt(1.0 / t.dephasing_rate),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How an excitation missed by the readout is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MissModel {
    /// Caught by the next measurement without decaying.
    #[default]
    NextInterval,
    /// Missed again with probability `p_g_given_e` each interval, or decays
    /// before it is caught and receives no feedback.
    Geometric,
}

type Row = (EventLabel, f64, Complex64, u32);

/// Probability, zero-feedback coherence and feedback multiplicity of every
/// event. Independent of the feedback phase. A label may span several rows.
fn event_table(params: &SystemParams, miss: MissModel) -> Vec<Row> {
    let p = params;
    let (p1, _) = event1_coherence(p, -p.theta_0);
    let (p2, c2) = event2_coherence(p);
    let p0 = 1.0 - p.gamma_up * p.t_m;
    let (p_eg, p_ge) = (p.p_e_given_g, p.p_g_given_e);
    let (p_gg, p_ee) = (1.0 - p_eg, 1.0 - p_ge);
    let survive_gap = (-p.gamma * p.t_g).exp();
    let decay_gap = -(-p.gamma * p.t_g).exp_m1();
    let cis = |phi: f64| Complex64::from_polar(1.0, phi);
    let c_ro = Complex64::new(p.c_ro, 0.0);
    let c1 = c_ro * survivor_coherence(p) * cis(p.theta_0);
    let heated = cis(p.chi * p.t_m + p.theta_0);
    use EventLabel::*;
    let mut rows = vec![
        (E0a, p0 * p_gg, c_ro, 0),
        (E0b, p0 * p_eg, c_ro * heated, 2),
        (E1a, p1 * p_ee * survive_gap, c1 * cis(p.chi * p.t_g), 1),
    ];
    // A missed excitation is caught later whether or not it decays during
    // the gap, so 1b carries the whole misidentified branch.
    let p1b = p1 * p_ge;
    match miss {
        MissModel::NextInterval => rows.push((E1b, p1b, c1 * cis(p.chi * (p.t_m + p.t_g) + p.theta_0), 1)),
        MissModel::Geometric => {
            let s = (-p.gamma * p.t_m).exp();
            let a = heated * s;
            let denom = Complex64::new(1.0, 0.0) - a * p_ge;
            let w_caught = p_ee * s / (1.0 - p_ge * s);
            let caught = a * p_ee / denom * cis(p.chi * p.t_g);
            let decayed = exp_ratio1(z_t(p)) * (p.gamma * p.t_m) / denom;
            if w_caught > 0.0 {
                rows.push((E1b, p1b * w_caught, c1 * caught / w_caught, 1));
            }
            if w_caught < 1.0 {
                rows.push((E1b, p1b * (1.0 - w_caught), c1 * decayed / (1.0 - w_caught), 0));
            }
        }
    }
    rows.extend([
        (E1c, p1 * p_ee * decay_gap, c1 * cis(p.chi * (p.t_m + p.t_g / 2.0) + p.theta_0), 2),
        (E2a, p2 * p_gg, c_ro * c2, 0),
        (E2b, p2 * p_eg, c_ro * c2 * heated, 2),
    ]);
    rows
}

/// Seven-event dephasing budget at feedback phase `theta_tilde`.
pub fn event_budget(params: &SystemParams, theta_tilde: f64) -> BudgetReport {
    event_budget_with(params, theta_tilde, MissModel::NextInterval)
}

pub fn event_budget_with(params: &SystemParams, theta_tilde: f64, miss: MissModel) -> BudgetReport {
    let table = event_table(params, miss);
    let terms: Vec<EventTerm> = EventLabel::ALL
        .iter()
        .map(|&label| {
            let rows: Vec<&Row> = table.iter().filter(|r| r.0 == label).collect();
            let probability: f64 = rows.iter().map(|r| r.1).sum();
            let mix = |theta: f64| {
                let sum: Complex64 = rows.iter().map(|r| r.2 * Complex64::from_polar(r.1, r.3 as f64 * theta)).sum();
                if probability > 0.0 {
                    sum / probability
                } else {
                    rows[0].2 * Complex64::from_polar(1.0, rows[0].3 as f64 * theta)
                }
            };
            let zero_feedback = mix(0.0);
            let dephasing_rate = rows
                .iter()
                .map(|r| r.1 * (1.0 - (r.2 * Complex64::from_polar(1.0, r.3 as f64 * theta_tilde)).re))
                .sum::<f64>()
                / params.t_m;
            EventTerm {
                label,
                probability,
                coherence: mix(theta_tilde),
                alpha: rows[0].3,
                zero_feedback,
                theta_i0: zero_feedback.arg(),
                dephasing_rate,
            }
        })
        .collect();
    let total_rate = terms.iter().map(|t| t.dephasing_rate).sum::<f64>();
    let postselected_rate = terms.iter().filter(|t| t.label.is_postselected()).map(|t| t.dephasing_rate).sum();
    BudgetReport {
        theta_tilde,
        total_rate,
        total_tphi: 1.0 / total_rate,
        erasure_rate: params.gamma_up + params.p_e_given_g / params.t_m,
        postselected_rate,
        terms,
    }
}

/// Budget at the phase selected by `params.feedback_phase`.
pub fn event_budget_configured(params: &SystemParams) -> BudgetReport {
    event_budget(params, resolve_feedback_phase(params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalPhase {
    /// Small-angle closed form; `None` when no event carries feedback weight.
    pub small_angle: Option<f64>,
    /// Minimizer of the exact total rate over (-pi, pi].
    pub refined: f64,
    pub degenerate: bool,
}

/// Total rate and its first two derivatives in the feedback phase.
fn rate_derivatives(table: &[Row], t_m: f64, theta: f64) -> (f64, f64, f64) {
    let (mut r, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &(_, p, c0, alpha) in table {
        let a = alpha as f64;
        let phi = c0.arg() + a * theta;
        let m = p * c0.norm();
        r += p - m * phi.cos();
        d1 += m * a * phi.sin();
        d2 += m * a * a * phi.cos();
    }
    (r / t_m, d1 / t_m, d2 / t_m)
}

/// Feedback phase minimizing the budget's total rate.
pub fn optimal_phase(params: &SystemParams) -> OptimalPhase {
    optimal_phase_with(params, MissModel::NextInterval)
}

pub fn optimal_phase_with(params: &SystemParams, miss: MissModel) -> OptimalPhase {
    let table = event_table(params, miss);
    let (mut num, mut den) = (0.0, 0.0);
    for &(_, p, c0, alpha) in &table {
        let w = p * c0.norm() * alpha as f64;
        num += w * c0.arg();
        den += w * alpha as f64;
    }
    let degenerate = !(den > 0.0);
    let small_angle = (!degenerate).then(|| wrap_angle(-num / den));

    const GRID: usize = 1024;
    let rate = |th: f64| rate_derivatives(&table, params.t_m, th).0;
    let mut best = 0.0;
    let mut best_rate = rate(0.0);
    for i in 0..GRID {
        let th = -PI + (i + 1) as f64 * 2.0 * PI / GRID as f64;
        let r = rate(th);
        if r < best_rate {
            best = th;
            best_rate = r;
        }
    }
    if let Some(sa) = small_angle {
        if rate(sa) < best_rate {
            best = sa;
            best_rate = rate(sa);
        }
    }
    let mut th = best;
    for _ in 0..50 {
        let (_, d1, d2) = rate_derivatives(&table, params.t_m, th);
        if !(d2 > 0.0) {
            break;
        }
        let next = th - d1 / d2;
        if !next.is_finite() || (next - best).abs() > 2.0 * PI / GRID as f64 {
            break;
        }
        let done = (next - th).abs() < 1e-15;
        th = next;
        if done {
            break;
        }
    }
    let refined = if rate(th) <= best_rate { wrap_angle(th) } else { best };
    OptimalPhase { small_angle, refined, degenerate }
}

/// Phase the protocol applies per detection for the configured policy.
pub fn resolve_feedback_phase(params: &SystemParams) -> f64 {
    match params.feedback_phase {
        FeedbackPhase::Optimal => optimal_phase(params).refined,
        FeedbackPhase::Fixed(x) => x,
    }
}

/// Derivative of the total rate in the feedback phase.
pub fn rate_slope(params: &SystemParams, theta_tilde: f64) -> f64 {
    rate_derivatives(&event_table(params, MissModel::NextInterval), params.t_m, theta_tilde).1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    WithPhase,
    WithoutPhase,
    Postselected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DephasingMap {
    /// Dispersive shifts (rad/s).
    pub chi_grid: Vec<f64>,
    pub t_m_grid: Vec<f64>,
    /// `tphi[i][j]` at `chi_grid[i]`, `t_m_grid[j]` (s).
    pub tphi: Vec<Vec<f64>>,
    /// Grid cell nearest to the input parameters, if they lie inside the grid.
    pub experiment: Option<(usize, usize)>,
    pub mode: MapMode,
}

impl DephasingMap {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["chi_hz", "t_m", "tphi", "experiment"]).map_err(csv_err)?;
        for (i, &chi) in self.chi_grid.iter().enumerate() {
            for (j, &t_m) in self.t_m_grid.iter().enumerate() {
                let mark = if self.experiment == Some((i, j)) { "1" } else { "0" };
                w.write_record([fmt(chi / (2.0 * PI)), fmt(t_m), fmt(self.tphi[i][j]), mark.into()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Pure dephasing time of the event model over a `(chi, t_m)` grid.
pub fn map_cell(params: &SystemParams, mode: MapMode) -> f64 {
    let rate = match mode {
        MapMode::WithPhase => event_budget(params, optimal_phase(params).refined).total_rate,
        MapMode::WithoutPhase => event_budget(params, 0.0).total_rate,
        MapMode::Postselected => event_budget(params, 0.0).postselected_rate,
    };
    1.0 / rate
}

pub fn dephasing_map(chi_grid: &[f64], t_m_grid: &[f64], params: &SystemParams, mode: MapMode) -> Result<DephasingMap> {
    if chi_grid.is_empty() || t_m_grid.is_empty() {
        return Err(crate::Error::input("empty grid"));
    }
    if chi_grid.iter().chain(t_m_grid).any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(crate::Error::input("grid values must be positive and finite"));
    }
    let tphi: Vec<Vec<f64>> = chi_grid
        .par_iter()
        .map(|&chi| {
            t_m_grid
                .iter()
                .map(|&t_m| map_cell(&SystemParams { chi, t_m, ..*params }, mode))
                .collect()
        })
        .collect();
    Ok(DephasingMap {
        chi_grid: chi_grid.to_vec(),
        t_m_grid: t_m_grid.to_vec(),
        tphi,
        experiment: nearest(chi_grid, params.chi).zip(nearest(t_m_grid, params.t_m)),
        mode,
    })
}

fn nearest(grid: &[f64], x: f64) -> Option<usize> {
    let (lo, hi) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    if x < lo || x > hi {
        return None;
    }
    grid.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
}

/// `1 - (p_eg + p_ge) / 2`.
pub fn discrimination_fidelity(p_e_given_g: f64, p_g_given_e: f64) -> f64 {
    1.0 - (p_e_given_g + p_g_given_e) / 2.0
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Confusion of unit-variance Gaussian readout signals, `E` centred at
/// `-separation/2`, `G` at `+separation/2`, label `E` below `boundary`.
pub fn gaussian_confusion(separation: f64, boundary: f64) -> (f64, f64) {
    let half = separation / 2.0;
    (normal_cdf(boundary - half), normal_cdf(-boundary - half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryOptimum {
    pub boundary: f64,
    pub rate: f64,
    pub midpoint_rate: f64,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    /// False when the coarse scan found several local minima.
    pub unimodal: bool,
}

/// Total dephasing rate at optimal feedback for a given decision boundary.
/// Missed excitations may be missed repeatedly, so false negatives carry
/// their full cost when the boundary moves far from the midpoint.
pub fn boundary_objective(separation: f64, boundary: f64, params: &SystemParams) -> f64 {
    let (p_e_given_g, p_g_given_e) = gaussian_confusion(separation, boundary);
    let p = SystemParams { p_e_given_g, p_g_given_e, ..*params };
    let miss = MissModel::Geometric;
    event_budget_with(&p, optimal_phase_with(&p, miss).refined, miss).total_rate
}

/// Decision boundary minimizing the total dephasing rate.
pub fn optimize_boundary(separation: f64, params: &SystemParams) -> Result<BoundaryOptimum> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(crate::Error::input("separation must be positive"));
    }
    const N: usize = 241;
    const TOL: f64 = 1e-4;
    let (lo, hi) = (-separation, separation);
    let f = |b: f64| boundary_objective(separation, b, params);
    let grid: Vec<(f64, f64)> = (0..N)
        .into_par_iter()
        .map(|i| {
            let b = lo + (hi - lo) * i as f64 / (N - 1) as f64;
            (b, f(b))
        })
        .collect();
    let scale = grid.iter().map(|g| g.1.abs()).fold(0.0, f64::max);
    let local_minima = (1..N - 1)
        .filter(|&i| grid[i].1 < grid[i - 1].1 - 1e-12 * scale && grid[i].1 <= grid[i + 1].1)
        .count();
    let (ibest, _) = grid.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).unwrap();
    let midpoint_rate = f(0.0);
    let finish = |boundary: f64, rate: f64, unimodal: bool| {
        let (p_e_given_g, p_g_given_e) = gaussian_confusion(separation, boundary);
        BoundaryOptimum { boundary, rate, midpoint_rate, p_e_given_g, p_g_given_e, unimodal }
    };
    if local_minima > 1 {
        return Ok(finish(grid[ibest].0, grid[ibest].1, false));
    }
    let mut a = grid[ibest.saturating_sub(1)].0;
    let mut b = grid[(ibest + 1).min(N - 1)].0;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    Ok(if fx <= grid[ibest].1 { finish(x, fx, true) } else { finish(grid[ibest].0, grid[ibest].1, true) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derived_c_ro;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    fn ideal(p: SystemParams) -> SystemParams {
        p.ideal_measurement()
    }

    #[test]
    fn idle_rate_examples() {
        let p = SystemParams::idle();
        let t = 1.0 / dephasing_idle(&p);
        assert!((8.2e-3..=8.6e-3).contains(&t), "{t}");
        let big = SystemParams { chi: 1e15, ..p };
        assert!(close(dephasing_idle(&big), p.gamma_up, 1e-12));
        let sym = SystemParams { chi: p.gamma, ..p };
        assert!(close(dephasing_idle(&sym), p.gamma_up / 2.0, 1e-14));
    }

    #[test]
    fn no_decay_single_excitation() {
        let p = SystemParams::idle();
        let (m, _) = single_excitation_coherence_no_decay(p.chi, p.t_m, 0.0);
        assert!((m - 0.942).abs() < 5e-4, "{m}");
        let (m0, _) = single_excitation_coherence_no_decay(p.chi, 2.0 * PI / p.chi, 0.0);
        assert!(m0 < 1e-15);
        let t = 1e-8;
        let (m1, _) = single_excitation_coherence_no_decay(p.chi, t, 0.0);
        let x = p.chi * t;
        assert!((m1 - (1.0 - x * x / 24.0)).abs() < x.powi(4) / 1000.0);
    }

    #[test]
    fn event1_small_decay_limit() {
        let mut p = SystemParams::idle();
        p.theta_0 = 0.3;
        p.gamma = 1e-6 / p.t_m;
        let (p1, c1) = event1_coherence(&p, 0.0);
        let (m, ph) = single_excitation_coherence_no_decay(p.chi, p.t_m, p.theta_0);
        assert!(close(c1.norm(), m, 1e-5));
        assert!(wrap_angle(c1.arg() - ph).abs() < 1e-5);
        assert!(close(p1, p.gamma_up * p.t_m, 1e-5));
    }

    #[test]
    fn event1_matches_closed_form_components() {
        let p = SystemParams::repeated();
        let (_, c1) = event1_coherence(&p, 0.0);
        // Magnitude and phase written out in real arithmetic.
        let (g, x, t) = (p.gamma, p.chi, p.t_m);
        let e = (-g * t).exp();
        let re = e * (x * t).cos() - 1.0;
        let im = e * (x * t).sin();
        let mag = g / (1.0 - e) / x.hypot(g) * re.hypot(im);
        assert!(close(c1.norm(), mag, 1e-12));
        let phase = (x * re + g * im).atan2(g * re - x * im);
        // atan2 resolves the branch; the ratio form fixes the phase mod pi.
        assert!(wrap_angle(2.0 * (c1.arg() - phase)).abs() < 1e-10);
    }

    #[test]
    fn event2_limits() {
        let mut p = ideal(SystemParams::idle());
        p.gamma = 0.0;
        let (p2, _) = event2_coherence(&p);
        assert_eq!(p2, 0.0);
        let mut q = ideal(SystemParams::idle());
        q.t_m = 20e-3;
        q.gamma_up = 0.1;
        let (p2, c2) = event2_coherence(&q);
        let rate2 = p2 * (1.0 - c2.re) / q.t_m;
        assert!(close(rate2, dephasing_idle(&q), 0.02), "{rate2} {}", dephasing_idle(&q));
    }

    #[test]
    fn event2a_contribution() {
        let p = SystemParams::repeated();
        let b = event_budget(&p, 0.0);
        let t = 1.0 / b.term(EventLabel::E2a).dephasing_rate;
        assert!(close(t, 1.678, 0.01), "{t}");
    }

    #[test]
    fn ideal_feedback_examples() {
        let p = SystemParams::idle();
        let ratio = dephasing_idle(&p) / dephasing_feedback_ideal(&p);
        assert!((ratio - 17.0).abs() < 0.5, "{ratio}");
        let t = 1.0 / dephasing_feedback_ideal(&p);
        assert!(close(t, 0.143, 0.01), "{t}");
        let tiny = SystemParams { t_m: 1e-9, ..p };
        let x = p.chi * 1e-9;
        assert!(close(dephasing_feedback_ideal(&tiny), p.gamma_up * x * x / 24.0, 1e-4));
    }

    #[test]
    fn no_phase_correction_examples() {
        let p = SystemParams::idle();
        let tiny = SystemParams { t_m: 1e-9, ..p };
        let r = dephasing_no_phase_correction(&tiny) / dephasing_feedback_ideal(&tiny);
        assert!((r - 4.0).abs() < 1e-4);
        let zero = SystemParams { t_m: 2.0 * PI / p.chi, ..p };
        assert!(close(dephasing_no_phase_correction(&zero), p.gamma_up, 1e-12));
    }

    #[test]
    fn decay_conditioned_long_interval() {
        let mut p = SystemParams::idle();
        p.t_m = 50.0 / p.gamma;
        let c = decay_conditioned_coherence(&p);
        let limit = p.gamma / Complex64::new(p.gamma, -p.chi);
        assert!((c - limit).norm() < 1e-12);
    }

    #[test]
    fn budget_reduces_to_ideal_events() {
        let p = ideal(SystemParams::repeated());
        let th = -0.7;
        let b = event_budget(&p, th);
        let (p1, c1) = event1_coherence(&p, th);
        let (p2, c2) = event2_coherence(&p);
        let expected = (p1 * (1.0 - c1.re) + p2 * (1.0 - c2.re)) / p.t_m;
        assert!(close(b.total_rate, expected, 1e-12));
        for l in [EventLabel::E0b, EventLabel::E1b, EventLabel::E1c, EventLabel::E2b] {
            assert_eq!(b.term(l).probability, 0.0);
        }
    }

    #[test]
    fn budget_total_at_device_values() {
        let p = SystemParams::repeated();
        let op = optimal_phase(&p);
        let b = event_budget(&p, op.small_angle.unwrap());
        assert!(close(b.total_tphi, 34.8e-3, 0.03), "{}", b.total_tphi);
        let r = event_budget(&p, op.refined);
        assert!(r.total_rate <= b.total_rate);
    }

    #[test]
    fn erasure_rates() {
        let p = SystemParams::repeated();
        let b = event_budget(&p, 0.0);
        assert!(close(1.0 / b.erasure_rate, 4.7e-3, 0.03), "{}", 1.0 / b.erasure_rate);
        assert!(close(p.t_m / p.p_e_given_g, 11.8e-3, 0.03));
    }

    #[test]
    fn postselected_budget_uses_derived_readout_factor() {
        let p = SystemParams::repeated();
        assert_eq!(p.c_ro, derived_c_ro(p.t_m));
        let b = event_budget(&p, 0.0);
        let t = 1.0 / b.postselected_rate;
        assert!(close(t, 0.182, 0.01), "{t}");
    }

    #[test]
    fn budget_long_interval_limit() {
        let mut p = ideal(SystemParams::idle());
        p.t_m = 2e-3;
        p.gamma_up = 0.1;
        let b = event_budget(&p, optimal_phase(&p).refined);
        assert!(close(b.total_rate, dephasing_idle(&p), 0.01), "{} {}", b.total_rate, dephasing_idle(&p));
    }

    #[test]
    fn single_event_optimal_phase() {
        let mut p = ideal(SystemParams::idle());
        p.gamma = 1e-9;
        p.theta_0 = 0.2;
        let op = optimal_phase(&p);
        let expected = wrap_angle(-(p.chi * p.t_m / 2.0).rem_euclid(PI) - p.theta_0);
        assert!(wrap_angle(op.small_angle.unwrap() - expected).abs() < 1e-6);
        assert!(wrap_angle(op.refined - expected).abs() < 1e-6);
    }

    #[test]
    fn refined_phase_is_stationary_and_grid_minimal() {
        for p in [SystemParams::repeated(), SystemParams::idle()] {
            let op = optimal_phase(&p);
            let h = 1e-6;
            let fd = (event_budget(&p, op.refined + h).total_rate - event_budget(&p, op.refined - h).total_rate)
                / (2.0 * h);
            assert!(fd.abs() < 1e-3 * p.gamma_up, "{fd}");
            let grid_best = (0..100_000)
                .map(|i| -PI + (i + 1) as f64 * 2.0 * PI / 100_000.0)
                .min_by(|a, b| event_budget(&p, *a).total_rate.total_cmp(&event_budget(&p, *b).total_rate))
                .unwrap();
            assert!(wrap_angle(grid_best - op.refined).abs() < 1e-3);
            assert!(wrap_angle(op.small_angle.unwrap() - op.refined).abs() < 0.05);
        }
    }

    #[test]
    fn degenerate_phase_flagged() {
        let mut p = ideal(SystemParams::idle());
        p.gamma_up = 0.0;
        let op = optimal_phase(&p);
        assert!(op.degenerate);
        assert!(op.small_angle.is_none());
    }

    #[test]
    fn map_experiment_points() {
        let p = ideal(SystemParams::repeated());
        let chi: Vec<f64> = (1..=9).map(|i| p.chi * i as f64 / 5.0).collect();
        let tm: Vec<f64> = (1..=9).map(|i| p.t_m * i as f64 / 5.0).collect();
        let with = dephasing_map(&chi, &tm, &p, MapMode::WithPhase).unwrap();
        let without = dephasing_map(&chi, &tm, &p, MapMode::WithoutPhase).unwrap();
        let (i, j) = with.experiment.unwrap();
        assert_eq!((i, j), (4, 4));
        assert!(close(with.tphi[i][j], 0.122, 0.03), "{}", with.tphi[i][j]);
        let post = dephasing_map(&chi, &tm, &p, MapMode::Postselected).unwrap();
        assert!(close(post.tphi[i][j], 1.7, 0.05), "{}", post.tphi[i][j]);
        for (a, b) in with.tphi.iter().flatten().zip(without.tphi.iter().flatten()) {
            assert!(*a >= *b * (1.0 - 1e-12));
        }
    }

    #[test]
    fn map_consistency_with_zero_phase() {
        let p = SystemParams { feedback_phase: FeedbackPhase::Fixed(0.0), ..ideal(SystemParams::idle()) };
        let b = event_budget(&p, resolve_feedback_phase(&p));
        assert_eq!(1.0 / b.total_rate, map_cell(&p, MapMode::WithoutPhase));
    }

    #[test]
    fn map_rejects_bad_grid() {
        let p = SystemParams::idle();
        assert!(dephasing_map(&[], &[1e-6], &p, MapMode::WithPhase).is_err());
        assert!(dephasing_map(&[-1.0], &[1e-6], &p, MapMode::WithPhase).is_err());
    }

    #[test]
    fn fidelity_examples() {
        assert!((discrimination_fidelity(0.0013, 0.0013) - 0.9987).abs() < 1e-15);
        assert_eq!(discrimination_fidelity(0.0, 0.0), 1.0);
        assert_eq!(discrimination_fidelity(1.0, 1.0), 0.0);
    }

    #[test]
    fn gaussian_confusion_examples() {
        let (a, b) = gaussian_confusion(6.0, 0.0);
        assert!((a - b).abs() < 1e-18);
        assert!((a - 0.5 * erfc(3.0 / std::f64::consts::SQRT_2)).abs() < 1e-18);
        let (a, b) = gaussian_confusion(6.0, -40.0);
        assert!(a < 1e-300 && (b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_optimizer_contract() {
        // Midpoint errors of 0.13%.
        let sep = 2.0 * 3.0115;
        let (m, _) = gaussian_confusion(sep, 0.0);
        assert!((m - 0.0013).abs() < 2e-6);
        let p = SystemParams::idle();
        let opt = optimize_boundary(sep, &p).unwrap();
        assert!(opt.unimodal);
        assert!(opt.rate <= opt.midpoint_rate);
        assert!(opt.boundary < 0.0, "{}", opt.boundary);
        assert!(opt.p_e_given_g < 0.0013 && opt.p_g_given_e > 0.0013);

        let hot = SystemParams { gamma_up: 1e5, ..p };
        let hot_opt = optimize_boundary(sep, &hot).unwrap();
        assert!(hot_opt.boundary.abs() < opt.boundary.abs());
        // Grid oracle.
        let scan = (0..4001)
            .map(|i| -sep + 2.0 * sep * i as f64 / 4000.0)
            .map(|b| boundary_objective(sep, b, &p))
            .fold(f64::INFINITY, f64::min);
        assert!(opt.rate <= scan * (1.0 + 1e-9));
    }

    #[test]
    fn geometric_misses_reduce_to_next_interval() {
        let mut p = SystemParams::repeated();
        p.gamma = 1.0;
        p.p_g_given_e = 1e-7;
        let a = event_budget(&p, -0.7);
        let b = event_budget_with(&p, -0.7, MissModel::Geometric);
        let (ta, tb) = (a.term(EventLabel::E1b), b.term(EventLabel::E1b));
        assert!((ta.coherence - tb.coherence).norm() < 1e-5);
        assert!(close(ta.probability, tb.probability, 1e-15));
    }

    #[test]
    fn repeated_misses_cost_more() {
        let mut p = SystemParams::repeated();
        p.p_g_given_e = 0.9;
        let th = optimal_phase(&p).refined;
        let a = event_budget(&p, th).term(EventLabel::E1b).dephasing_rate;
        let b = event_budget_with(&p, th, MissModel::Geometric).term(EventLabel::E1b).dephasing_rate;
        assert!(b > a, "{b} {a}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn probabilities_sum_to_one(
            chi_hz in 1e3f64..1e6, gamma in 1e3f64..1e6, gamma_up in 1.0f64..1e3,
            t_m in 0.5e-6f64..20e-6, tg_frac in 0.0f64..0.9, p_eg in 0.0f64..0.1, p_ge in 0.0f64..0.1,
            theta in -PI..PI,
        ) {
            let p = SystemParams {
                gamma, gamma_up, t_m, t_g: tg_frac * t_m, p_e_given_g: p_eg, p_g_given_e: p_ge,
                ..SystemParams::idle().with_chi_hz(chi_hz)
            };
            let b = event_budget(&p, theta);
            prop_assert!((b.probability_sum() - 1.0).abs() < 1e-12);
            let g = event_budget_with(&p, theta, MissModel::Geometric);
            prop_assert!((g.probability_sum() - 1.0).abs() < 1e-12);
            prop_assert!(g.terms.iter().all(|t| t.coherence.norm() <= 1.0 + 1e-12));
            prop_assert!(b.terms.iter().all(|t| t.coherence.norm() <= 1.0 + 1e-12 && t.dephasing_rate >= 0.0));
            let sum: f64 = b.terms.iter().map(|t| t.dephasing_rate).sum();
            prop_assert!((sum - b.total_rate).abs() <= 1e-12 * b.total_rate.abs());
            let op = optimal_phase(&p);
            prop_assert!(event_budget(&p, op.refined).total_rate <= event_budget(&p, 0.0).total_rate * (1.0 + 1e-12));
        }
    }
}
