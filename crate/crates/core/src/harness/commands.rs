//! Subcommand bodies. Each writes its files through an [`OutputDir`] and
//! returns a short text summary.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use super::config::RunConfig;
use super::manifest::OutputDir;
use super::plot::{line_chart, Series};
use crate::analytics::{
    dephasing_feedback_ideal, dephasing_idle, dephasing_map, dephasing_no_phase_correction,
    discrimination_fidelity, event1_coherence, event_budget, event_budget_configured, optimal_phase,
    optimize_boundary, BudgetReport, MapMode,
};
use crate::coherence::{
    coherence_series, erasure_rate_mle, fit_decay, fit_fringe, fit_survival_rate, ramsey_probability,
    survival_from_first_detection, write_decay_csv, write_survival_csv, CoherencePoint,
    DecayFit, ErasureEstimate, FringeFit, Selection,
};
use crate::error::{Error, Result};
use crate::hmm::{
    argmax_states, baum_welch, build_model, simulate_observations, smooth, BaumWelchOptions, FittedParams,
    HmmParams, RleRecord,
};
use crate::model::{derive_rates, FeedbackPhase, SystemParams};
use crate::numeric::unwrap_phases;
use crate::trajectory::{
    conditioned_survivor_phases, run_ensemble_traces, shot_seed, ProtocolConfig, ShotTrace,
};

/// Text summary and failure flag of one command.
#[derive(Debug, Default)]
pub struct CommandReport {
    pub lines: Vec<String>,
    pub failed: bool,
}

impl CommandReport {
    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }
}

/// Independent seed for the `stream`-th random component of a command.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    shot_seed(master ^ 0x6a09_e667_f3bc_c908, stream)
}

/// Cycle counts of `points` evenly spaced checkpoints up to `horizon`.
pub fn checkpoints(horizon: f64, t_m: f64, points: usize) -> Result<Vec<usize>> {
    let total = ((horizon / t_m) * (1.0 + 1e-12)).floor() as usize;
    if total == 0 || points == 0 {
        return Err(Error::Config(format!("horizon {horizon} s holds no checkpoint at t_m = {t_m} s")));
    }
    let mut v: Vec<usize> = (1..=points)
        .map(|i| (i as f64 * total as f64 / points as f64).round() as usize)
        .filter(|&c| c > 0)
        .collect();
    v.dedup();
    Ok(v)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::numerical(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::numerical(e.to_string()))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".into(), num)
}

fn ms(x: f64) -> String {
    format!("{:.3} ms", x * 1e3)
}

/// Decay fit reduced to the quantities reported downstream.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub fit: Option<DecayFit>,
    pub tphi: Option<f64>,
    /// Half-width of the one-sigma interval on `tphi`.
    pub tphi_err: Option<f64>,
    pub error: Option<String>,
}

impl FitSummary {
    fn from(series: Option<&[(f64, CoherencePoint)]>, t1_cavity: f64) -> Self {
        let fit = match series {
            Some(s) => fit_decay(s, t1_cavity),
            None => Err(Error::EmptyEnsemble("no surviving shots".into())),
        };
        match fit {
            Ok(f) => {
                let err = match (f.tphi_lower, f.tphi_upper) {
                    (Some(lo), Some(hi)) => Some((hi - lo) / 2.0),
                    _ => None,
                };
                FitSummary { fit: Some(f), tphi: f.tphi, tphi_err: err, error: None }
            }
            Err(e) => FitSummary { fit: None, tphi: None, tphi_err: None, error: Some(e.to_string()) },
        }
    }

    /// Dephasing rate and its error, from `tphi`.
    fn rate(&self) -> (Option<f64>, Option<f64>) {
        match self.tphi {
            Some(t) => (Some(1.0 / t), self.tphi_err.map(|e| e / (t * t))),
            None => (None, None),
        }
    }
}

fn abs_points(series: &[(f64, CoherencePoint)]) -> Vec<(f64, f64)> {
    series.iter().map(|(t, c)| (t * 1e3, c.abs())).collect()
}

#[derive(Debug, Serialize)]
struct DecaySummary<'a> {
    params: &'a SystemParams,
    theta_tilde: f64,
    idle: FitSummary,
    feedback: FitSummary,
    postselected: FitSummary,
    erasure: ErasureEstimate,
    survival_fit_rate: Option<f64>,
    predicted: Predicted,
}

#[derive(Debug, Serialize)]
struct Predicted {
    tphi_idle: f64,
    tphi_feedback: f64,
    tphi_postselected: f64,
    erasure_rate: f64,
}

fn feedback_traces(cfg_shots: usize, horizon: f64, p: &SystemParams, seed: u64, cps: &[usize]) -> Result<Vec<ShotTrace>> {
    run_ensemble_traces(&ProtocolConfig::feedback(horizon, 0), p, cfg_shots, seed, cps)
}

fn idle_traces(shots: usize, horizon: f64, p: &SystemParams, seed: u64, cps: &[usize]) -> Result<Vec<ShotTrace>> {
    run_ensemble_traces(&ProtocolConfig::idle(horizon, 0), p, shots, seed, cps)
}

/// Idle, feedback and postselected decays with fits and the erasure rate.
pub fn decay(cfg: &RunConfig, params: &SystemParams, out: &mut OutputDir, plots: bool) -> Result<CommandReport> {
    let dc = &cfg.decay;
    let cps = checkpoints(dc.horizon, params.t_m, dc.points)?;
    let idle = idle_traces(dc.idle_shots.unwrap_or(cfg.shots), dc.horizon, params, stream_seed(cfg.seed, 1), &cps)?;
    let fb = feedback_traces(cfg.shots, dc.horizon, params, stream_seed(cfg.seed, 2), &cps)?;

    let s_idle = coherence_series(&idle, &cps, params, Selection::All)?;
    let s_fb = coherence_series(&fb, &cps, params, Selection::All)?;
    let s_ps = coherence_series(&fb, &cps, params, Selection::NoDetection).ok();
    out.write("decay_idle.csv", &csv_bytes(|b| write_decay_csv(b, &s_idle))?)?;
    out.write("decay_feedback.csv", &csv_bytes(|b| write_decay_csv(b, &s_fb))?)?;
    if let Some(s) = &s_ps {
        out.write("decay_postselected.csv", &csv_bytes(|b| write_decay_csv(b, s))?)?;
    }

    let first: Vec<Option<usize>> = fb.iter().map(|t| t.first_detection).collect();
    let grid: Vec<f64> = std::iter::once(0.0).chain(cps.iter().map(|&c| c as f64 * params.t_m)).collect();
    let survival = survival_from_first_detection(&first, params.t_m, &grid);
    out.write("survival.csv", &csv_bytes(|b| write_survival_csv(b, &survival))?)?;
    let erasure = erasure_rate_mle(&first, fb[0].n_cycles, params.t_m)?;

    let budget = event_budget_configured(params);
    let predicted = Predicted {
        tphi_idle: 1.0 / dephasing_idle(params),
        tphi_feedback: budget.total_tphi,
        tphi_postselected: 1.0 / budget.postselected_rate,
        erasure_rate: budget.erasure_rate,
    };
    let summary = DecaySummary {
        params,
        theta_tilde: budget.theta_tilde,
        idle: FitSummary::from(Some(&s_idle), params.t1_cavity),
        feedback: FitSummary::from(Some(&s_fb), params.t1_cavity),
        postselected: FitSummary::from(s_ps.as_deref(), params.t1_cavity),
        erasure,
        survival_fit_rate: fit_survival_rate(&survival).ok(),
        predicted,
    };

    let p = &summary.predicted;
    let rows = [
        ("tphi_idle", summary.idle.tphi, summary.idle.tphi_err, p.tphi_idle),
        ("tphi_feedback", summary.feedback.tphi, summary.feedback.tphi_err, p.tphi_feedback),
        ("tphi_postselected", summary.postselected.tphi, summary.postselected.tphi_err, p.tphi_postselected),
        ("erasure_rate", Some(erasure.rate), Some(erasure.rate_err), p.erasure_rate),
    ];
    out.write(
        "decay_comparison.csv",
        &table(
            &["quantity", "simulated", "simulated_err", "predicted", "ratio"],
            rows.iter().map(|&(q, s, e, pr)| vec![q.into(), opt(s), opt(e), num(pr), opt(s.map(|s| s / pr))]),
        )?,
    )?;
    out.write_json("decay_fits.json", &summary)?;

    if plots {
        let mut series = vec![
            Series { name: "idle", points: abs_points(&s_idle) },
            Series { name: "feedback", points: abs_points(&s_fb) },
        ];
        if let Some(s) = &s_ps {
            series.push(Series { name: "postselected", points: abs_points(s) });
        }
        out.write("decay.svg", line_chart("Cavity coherence", "t (ms)", "|C|", &series).as_bytes())?;
        let surv = Series { name: "no detection", points: survival.iter().map(|&(t, f)| (t * 1e3, f)).collect() };
        out.write("survival.svg", line_chart("Survival", "t (ms)", "fraction", &[surv]).as_bytes())?;
    }

    let mut r = CommandReport::default();
    for (q, s, e, pr) in rows {
        let fmt_t = |x: f64| if q == "erasure_rate" { format!("{x:.1} /s") } else { ms(x) };
        let sim = s.map_or("fit failed".to_string(), |s| match e {
            Some(e) => format!("{} +- {}", fmt_t(s), fmt_t(e)),
            None => fmt_t(s),
        });
        r.line(format!("{q:<18} simulated {sim:<28} predicted {}", fmt_t(pr)));
    }
    Ok(r)
}

/// Single-excitation coherence and full-protocol dephasing versus `t_m`.
pub fn sweep_tm(cfg: &RunConfig, params: &SystemParams, out: &mut OutputDir, plots: bool) -> Result<CommandReport> {
    let sc = &cfg.sweep_tm;
    let grid = sc.grid.values()?;
    if sc.samples < 2 {
        return Err(Error::Config("sweep_tm.samples must be at least 2".into()));
    }
    if sc.shots < 100 {
        return Err(Error::Config("sweep_tm.shots must be at least 100".into()));
    }
    struct Point {
        t_m: f64,
        c1: CoherencePoint,
        c1_analytic: Complex64,
        fringe: FringeFit,
        survivors: usize,
        decayed: usize,
        theta_tilde: f64,
        fit: FitSummary,
        tphi_budget: f64,
        tphi_idle: f64,
    }
    let thetas: Vec<f64> = (0..16).map(|k| k as f64 * PI / 8.0).collect();
    let mut fringes = Vec::new();
    let mut pts = Vec::with_capacity(grid.len());
    for (i, &t_m) in grid.iter().enumerate() {
        if !(t_m > params.t_g) {
            return Err(Error::Config(format!("sweep t_m = {t_m} s must exceed t_g = {} s", params.t_g)));
        }
        let p = SystemParams { t_m, ..*params }.validate()?.into_inner();
        let (surv, decayed) = conditioned_survivor_phases(&p, sc.samples, stream_seed(cfg.seed, 100 + i as u64));
        let offset = Complex64::from_polar(1.0, p.theta_0);
        let samples: Vec<Complex64> = surv.iter().map(|z| z * offset).collect();
        let c1 = CoherencePoint::from_samples(&samples)?;
        let fringe_pts: Vec<(f64, f64)> =
            thetas.iter().map(|&th| ramsey_probability(c1.value, th).map(|pr| (th, pr))).collect::<Result<_>>()?;
        fringes.extend(fringe_pts.iter().map(|&(th, pr)| (t_m, th, pr)));
        let fringe = fit_fringe(&fringe_pts)?;

        let theta_tilde = -p.chi * t_m / 2.0 - p.theta_0;
        let pf = SystemParams { feedback_phase: FeedbackPhase::Fixed(theta_tilde), ..p };
        let cps = checkpoints(sc.horizon, t_m, sc.points)?;
        let traces = feedback_traces(sc.shots, sc.horizon, &pf, stream_seed(cfg.seed, 200 + i as u64), &cps)?;
        let series = coherence_series(&traces, &cps, &pf, Selection::All)?;
        pts.push(Point {
            t_m,
            c1,
            c1_analytic: event1_coherence(&p, 0.0).1,
            fringe,
            survivors: surv.len(),
            decayed,
            theta_tilde,
            fit: FitSummary::from(Some(&series), p.t1_cavity),
            tphi_budget: event_budget(&pf, theta_tilde).total_tphi,
            tphi_idle: 1.0 / dephasing_idle(&p),
        });
    }
    let arg_sim = unwrap_phases(&pts.iter().map(|p| p.c1.arg()).collect::<Vec<_>>());
    let arg_ana = unwrap_phases(&pts.iter().map(|p| p.c1_analytic.arg()).collect::<Vec<_>>());
    let rows = pts.iter().enumerate().map(|(i, p)| {
        vec![
            num(p.t_m),
            num(params.chi * p.t_m),
            num(p.c1.abs()),
            num(p.c1.std_err),
            num(p.c1.arg()),
            num(arg_sim[i]),
            num(p.c1_analytic.norm()),
            num(arg_ana[i]),
            num(p.fringe.magnitude),
            num(p.fringe.phase),
            p.survivors.to_string(),
            p.decayed.to_string(),
            num(p.theta_tilde),
            opt(p.fit.tphi),
            opt(p.fit.tphi_err),
            num(p.tphi_budget),
            num(p.tphi_idle),
        ]
    });
    out.write(
        "sweep_tm.csv",
        &table(
            &[
                "t_m", "chi_t_m", "abs_c1", "abs_c1_err", "arg_c1", "arg_c1_unwrapped", "abs_c1_analytic",
                "arg_c1_analytic_unwrapped", "fringe_abs", "fringe_arg", "survivors", "decayed", "theta_tilde",
                "tphi", "tphi_err", "tphi_budget", "tphi_idle",
            ],
            rows,
        )?,
    )?;
    out.write(
        "fringes.csv",
        &table(&["t_m", "theta", "p"], fringes.iter().map(|&(t, th, pr)| vec![num(t), num(th), num(pr)]))?,
    )?;
    if plots {
        let us = |f: &dyn Fn(&Point) -> f64| pts.iter().map(|p| (p.t_m * 1e6, f(p))).collect::<Vec<_>>();
        out.write(
            "sweep_tm_c1.svg",
            line_chart(
                "Single-excitation coherence",
                "t_m (us)",
                "|C1|",
                &[
                    Series { name: "sampled", points: us(&|p| p.c1.abs()) },
                    Series { name: "analytic", points: us(&|p| p.c1_analytic.norm()) },
                ],
            )
            .as_bytes(),
        )?;
        out.write(
            "sweep_tm_tphi.svg",
            line_chart(
                "Dephasing time",
                "t_m (us)",
                "Tphi (ms)",
                &[
                    Series { name: "simulated", points: us(&|p| p.fit.tphi.unwrap_or(f64::NAN) * 1e3) },
                    Series { name: "budget", points: us(&|p| p.tphi_budget * 1e3) },
                    Series { name: "idle", points: us(&|p| p.tphi_idle * 1e3) },
                ],
            )
            .as_bytes(),
        )?;
    }
    let mut r = CommandReport::default();
    for p in &pts {
        r.line(format!(
            "t_m {:>6.2} us  |C1| {:.4} +- {:.4} (analytic {:.4})  Tphi {} (budget {})",
            p.t_m * 1e6,
            p.c1.abs(),
            p.c1.std_err,
            p.c1_analytic.norm(),
            p.fit.tphi.map_or("fit failed".into(), ms),
            ms(p.tphi_budget)
        ));
    }
    Ok(r)
}

/// Unweighted least-squares line.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    let pts: Vec<_> = points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Err(Error::numerical("need two finite points for a line fit"));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::numerical("degenerate abscissae"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit { slope, intercept: my - slope * mx, r_squared })
}

/// Longest horizon of a heating-sweep point, in predicted decay times.
const HEATING_DECAY_TIMES: f64 = 2.5;

#[derive(Debug, Serialize)]
struct HeatingSummary {
    idle: Option<LineFit>,
    feedback: Option<LineFit>,
    idle_analytic: LineFit,
    feedback_analytic: LineFit,
    slope_ratio: Option<f64>,
    slope_ratio_analytic: f64,
}

/// Idle and feedback dephasing rates versus the excitation rate.
pub fn sweep_heating(cfg: &RunConfig, params: &SystemParams, out: &mut OutputDir, plots: bool) -> Result<CommandReport> {
    let hc = &cfg.sweep_heating;
    let grid = hc.grid.values()?;
    if hc.shots < 100 {
        return Err(Error::Config("sweep_heating.shots must be at least 100".into()));
    }
    let mut rows = Vec::new();
    for (i, &g) in grid.iter().enumerate() {
        if !(g >= 0.0 && g <= 0.1 * params.gamma) {
            return Err(Error::Config(format!("gamma_up = {g} outside [0, 0.1 gamma]")));
        }
        let p = SystemParams { gamma_up: g, ..*params }.validate()?.into_inner();
        let (rate_idle, rate_fb) = (dephasing_idle(&p), event_budget_configured(&p).total_rate);
        // Beyond a few decay times |C| is noise-dominated and biases the fit.
        let horizon = |rate: f64| hc.horizon.min(HEATING_DECAY_TIMES / rate);
        let (h_idle, h_fb) = (horizon(rate_idle), horizon(rate_fb));
        let (c_idle, c_fb) = (checkpoints(h_idle, p.t_m, hc.points)?, checkpoints(h_fb, p.t_m, hc.points)?);
        let idle = idle_traces(hc.shots, h_idle, &p, stream_seed(cfg.seed, 300 + i as u64), &c_idle)?;
        let fb = feedback_traces(hc.shots, h_fb, &p, stream_seed(cfg.seed, 400 + i as u64), &c_fb)?;
        let fi = FitSummary::from(Some(&coherence_series(&idle, &c_idle, &p, Selection::All)?), p.t1_cavity);
        let ff = FitSummary::from(Some(&coherence_series(&fb, &c_fb, &p, Selection::All)?), p.t1_cavity);
        rows.push((g, fi.rate(), ff.rate(), rate_idle, rate_fb));
    }
    let line = |f: &dyn Fn(&(f64, (Option<f64>, Option<f64>), (Option<f64>, Option<f64>), f64, f64)) -> f64| {
        fit_line(&rows.iter().map(|r| (r.0, f(r))).collect::<Vec<_>>())
    };
    let nan = f64::NAN;
    let idle = line(&|r| r.1 .0.unwrap_or(nan)).ok();
    let feedback = line(&|r| r.2 .0.unwrap_or(nan)).ok();
    let idle_analytic = line(&|r| r.3)?;
    let feedback_analytic = line(&|r| r.4)?;
    let summary = HeatingSummary {
        idle,
        feedback,
        idle_analytic,
        feedback_analytic,
        slope_ratio: idle.zip(feedback).map(|(a, b)| a.slope / b.slope),
        slope_ratio_analytic: idle_analytic.slope / feedback_analytic.slope,
    };
    out.write(
        "sweep_heating.csv",
        &table(
            &[
                "gamma_up", "rate_idle", "rate_idle_err", "rate_feedback", "rate_feedback_err",
                "rate_idle_analytic", "rate_feedback_analytic",
            ],
            rows.iter().map(|r| {
                vec![num(r.0), opt(r.1 .0), opt(r.1 .1), opt(r.2 .0), opt(r.2 .1), num(r.3), num(r.4)]
            }),
        )?,
    )?;
    out.write_json("heating_fit.json", &summary)?;
    if plots {
        let pts = |f: &dyn Fn(&(f64, (Option<f64>, Option<f64>), (Option<f64>, Option<f64>), f64, f64)) -> f64| {
            rows.iter().map(|r| (r.0, f(r))).collect::<Vec<_>>()
        };
        let series = [
            Series { name: "idle", points: pts(&|r| r.1 .0.unwrap_or(nan)) },
            Series { name: "feedback", points: pts(&|r| r.2 .0.unwrap_or(nan)) },
            Series { name: "idle analytic", points: pts(&|r| r.3) },
            Series { name: "feedback analytic", points: pts(&|r| r.4) },
        ];
        out.write("sweep_heating.svg", line_chart("Dephasing rate", "Gamma_up (1/s)", "Gamma_phi (1/s)", &series).as_bytes())?;
    }
    let mut r = CommandReport::default();
    let s = |f: Option<LineFit>| f.map_or("fit failed".into(), |f| format!("{:.4} (R^2 {:.3})", f.slope, f.r_squared));
    r.line(format!("idle slope      {}  analytic {:.4}", s(summary.idle), idle_analytic.slope));
    r.line(format!("feedback slope  {}  analytic {:.4}", s(summary.feedback), feedback_analytic.slope));
    r.line(format!(
        "slope ratio     {}  analytic {:.2}",
        summary.slope_ratio.map_or("n/a".into(), |x| format!("{x:.2}")),
        summary.slope_ratio_analytic
    ));
    Ok(r)
}

#[derive(Debug, Serialize)]
struct BudgetSummary<'a> {
    params: &'a SystemParams,
    derived: crate::model::DerivedRates,
    discrimination_fidelity: f64,
    optimal_phase: crate::analytics::OptimalPhase,
    report: &'a BudgetReport,
    ideal_feedback_tphi: f64,
    no_phase_correction_tphi: f64,
    idle_tphi: f64,
}

/// Event budget, dephasing maps and optionally the readout boundary.
pub fn budget(cfg: &RunConfig, params: &SystemParams, out: &mut OutputDir, _plots: bool) -> Result<CommandReport> {
    let bc = &cfg.budget;
    let report = event_budget_configured(params);
    out.write("budget.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    let summary = BudgetSummary {
        params,
        derived: derive_rates(&params.validate()?),
        discrimination_fidelity: discrimination_fidelity(params.p_e_given_g, params.p_g_given_e),
        optimal_phase: optimal_phase(params),
        report: &report,
        ideal_feedback_tphi: 1.0 / dephasing_feedback_ideal(params),
        no_phase_correction_tphi: 1.0 / dephasing_no_phase_correction(params),
        idle_tphi: 1.0 / dephasing_idle(params),
    };
    out.write_json("budget.json", &summary)?;

    let chi: Vec<f64> = bc.chi_hz_grid.values()?.iter().map(|f| 2.0 * PI * f).collect();
    let t_m = bc.t_m_grid.values()?;
    let map_params = if bc.ideal_maps { params.ideal_measurement() } else { *params };
    let mut r = CommandReport::default();
    r.line(format!("theta_tilde       {:.4} rad", report.theta_tilde));
    for t in &report.terms {
        r.line(format!("event {:<3} p = {:.3e}  |C| = {:.6}  rate = {:.3} /s", t.label.as_str(), t.probability, t.coherence.norm(), t.dephasing_rate));
    }
    r.line(format!("total Tphi        {}", ms(report.total_tphi)));
    r.line(format!("postselected Tphi {}", ms(1.0 / report.postselected_rate)));
    r.line(format!("erasure time      {}", ms(1.0 / report.erasure_rate)));
    for (mode, name) in [
        (MapMode::WithPhase, "map_with_phase.csv"),
        (MapMode::WithoutPhase, "map_without_phase.csv"),
        (MapMode::Postselected, "map_postselected.csv"),
    ] {
        let map = dephasing_map(&chi, &t_m, &map_params, mode)?;
        out.write(name, &csv_bytes(|b| map.write_csv(b))?)?;
        if let Some((i, j)) = map.experiment {
            r.line(format!("{name:<22} at grid cell nearest the device: {}", ms(map.tphi[i][j])));
        }
    }
    if let Some(sep) = bc.separation {
        let b = optimize_boundary(sep, params)?;
        out.write_json("boundary.json", &b)?;
        r.line(format!(
            "boundary {:.4} (p_eg {:.2e}, p_ge {:.2e}), Tphi {} vs {} at midpoint{}",
            b.boundary,
            b.p_e_given_g,
            b.p_g_given_e,
            ms(1.0 / b.rate),
            ms(1.0 / b.midpoint_rate),
            if b.unimodal { "" } else { " (several local minima)" }
        ));
    }
    Ok(r)
}

#[derive(Debug, Serialize)]
struct HmmSummary {
    truth: HmmParams,
    guess: HmmParams,
    fitted: FittedParams,
    relative_error: [f64; 4],
    converged: bool,
    reconstruction_accuracy: f64,
    raw_readout_accuracy: f64,
}

/// Simulated readout record, Baum-Welch fit and state reconstruction.
pub fn hmm(cfg: &RunConfig, _params: &SystemParams, out: &mut OutputDir, plots: bool) -> Result<CommandReport> {
    let hc = &cfg.hmm;
    if hc.steps == 0 {
        return Err(Error::Config("hmm.steps must be positive".into()));
    }
    let truth_model = build_model(&hc.truth, hc.t_m, None)?;
    let (states, obs) = simulate_observations(&truth_model, hc.steps, stream_seed(cfg.seed, 7));
    let t = hc.truth;
    let s = hc.guess_scale;
    let guess = HmmParams {
        p_e_given_g: t.p_e_given_g * s[0],
        p_g_given_e: t.p_g_given_e * s[1],
        gamma_up: t.gamma_up * s[2],
        gamma: t.gamma * s[3],
    };
    let guess_model = build_model(&guess, hc.t_m, None)?;
    let opts = BaumWelchOptions { max_iter: hc.max_iter, tol: hc.tol, estimate_initial: hc.estimate_initial };
    let res = baum_welch(&obs, &guess_model, hc.t_m, opts)?;
    let fitted = FittedParams::from_result(&res, hc.t_m);
    let inference = smooth(&obs, &res.model)?;
    let rec = argmax_states(&inference.smoothed);
    let frac = |n: usize| n as f64 / states.len() as f64;
    let accuracy = frac(rec.iter().zip(&states).filter(|(a, b)| a == b).count());
    let raw = frac(obs.iter().zip(&states).filter(|(o, s)| o.index() == s.index()).count());
    let rel = |a: f64, b: f64| (a - b) / b;
    let summary = HmmSummary {
        truth: t,
        guess,
        relative_error: [
            rel(fitted.p_e_given_g, t.p_e_given_g),
            rel(fitted.p_g_given_e, t.p_g_given_e),
            rel(fitted.gamma_up, t.gamma_up),
            rel(fitted.gamma, t.gamma),
        ],
        fitted,
        converged: res.converged,
        reconstruction_accuracy: accuracy,
        raw_readout_accuracy: raw,
    };
    out.write_json("observations.json", &RleRecord::encode(&obs, hc.t_m))?;
    out.write_json("hmm_fit.json", &summary)?;
    out.write(
        "hmm_trace.csv",
        &table(
            &["iteration", "log_likelihood"],
            res.log_likelihood_trace.iter().enumerate().map(|(i, ll)| vec![i.to_string(), num(*ll)]),
        )?,
    )?;
    let n = hc.export_steps.min(obs.len());
    out.write(
        "reconstruction.csv",
        &table(
            &["step", "observed", "truth", "reconstructed", "posterior_e"],
            (0..n).map(|k| {
                vec![
                    k.to_string(),
                    obs[k].index().to_string(),
                    states[k].index().to_string(),
                    rec[k].index().to_string(),
                    num(inference.smoothed[k][1]),
                ]
            }),
        )?,
    )?;
    if plots {
        let pts = res.log_likelihood_trace.iter().enumerate().map(|(i, &ll)| (i as f64, ll)).collect();
        out.write("hmm_trace.svg", line_chart("Baum-Welch", "iteration", "log likelihood", &[Series { name: "LL", points: pts }]).as_bytes())?;
    }
    let mut r = CommandReport::default();
    let names = ["p_e_given_g", "p_g_given_e", "gamma_up", "gamma"];
    let fit_vals = [summary.fitted.p_e_given_g, summary.fitted.p_g_given_e, summary.fitted.gamma_up, summary.fitted.gamma];
    let truth_vals = [t.p_e_given_g, t.p_g_given_e, t.gamma_up, t.gamma];
    for i in 0..4 {
        r.line(format!(
            "{:<12} truth {:.4e}  fitted {:.4e}  ({:+.2}%)",
            names[i],
            truth_vals[i],
            fit_vals[i],
            100.0 * summary.relative_error[i]
        ));
    }
    r.line(format!(
        "iterations {} (converged: {}), reconstruction accuracy {:.4}, raw readout {:.4}",
        summary.fitted.iterations, summary.converged, accuracy, raw
    ));
    Ok(r)
}

/// One analytic consistency check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn within(name: &'static str, value: f64, target: f64, rel_tol: f64, unit: &str, scale: f64) -> CheckLine {
    let passed = ((value - target) / target).abs() <= rel_tol;
    CheckLine {
        name,
        passed,
        detail: format!("{:.4} {unit} vs {:.4} {unit} (tolerance {:.1}%)", value * scale, target * scale, rel_tol * 100.0),
    }
}

/// Analytic comparisons against the reference device values.
pub fn analytic_checks() -> Vec<CheckLine> {
    let rep = SystemParams::repeated();
    let ideal = rep.ideal_measurement();
    let mut lines = Vec::new();
    let improvement = dephasing_idle(&rep) / dephasing_feedback_ideal(&rep);
    lines.push(CheckLine {
        name: "ideal_feedback_improvement",
        passed: (improvement - 17.0).abs() <= 0.5,
        detail: format!("{improvement:.2} vs 17 +- 0.5"),
    });
    let short = SystemParams { t_m: 0.05 / rep.chi, ..ideal };
    let four = dephasing_no_phase_correction(&short) / dephasing_feedback_ideal(&short);
    lines.push(CheckLine {
        name: "phase_correction_fourfold",
        passed: (four / 4.0 - 1.0).abs() <= 0.01,
        detail: format!("{four:.4} vs 4 at chi t_m = 0.05"),
    });
    lines.push(within("erasure_time", 1.0 / event_budget_configured(&rep).erasure_rate, 4.7e-3, 0.03, "ms", 1e3));
    lines.push(within("budget_tphi", event_budget_configured(&rep).total_tphi, 34.8e-3, 0.03, "ms", 1e3));
    lines.push(within("map_with_phase", crate::analytics::map_cell(&ideal, MapMode::WithPhase), 122e-3, 0.03, "ms", 1e3));
    lines.push(within("map_postselected", crate::analytics::map_cell(&ideal, MapMode::Postselected), 1.7, 0.05, "s", 1.0));
    let sum = event_budget_configured(&rep).probability_sum();
    lines.push(CheckLine {
        name: "probability_sum",
        passed: (sum - 1.0).abs() <= 1e-12,
        detail: format!("|sum - 1| = {:.1e}", (sum - 1.0).abs()),
    });
    lines
}

/// Runs [`analytic_checks`]; the report fails when any line fails.
pub fn check(_cfg: &RunConfig, _params: &SystemParams, out: &mut OutputDir, _plots: bool) -> Result<CommandReport> {
    let lines = analytic_checks();
    out.write(
        "check.csv",
        &table(
            &["check", "passed", "detail"],
            lines.iter().map(|l| vec![l.name.into(), l.passed.to_string(), l.detail.clone()]),
        )?,
    )?;
    let mut r = CommandReport { failed: lines.iter().any(|l| !l.passed), ..Default::default() };
    for l in lines {
        r.line(format!("{} {:<28} {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail));
    }
    Ok(r)
}
