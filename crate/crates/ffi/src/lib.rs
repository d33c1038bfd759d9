//! C ABI over the analytic model, trajectory ensembles and HMM inference.
//!
//! Every fallible function returns a [`CfStatus`]; on failure the message is
//! available from [`cf_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_run` functions and released with the
//! matching `*_free`. Passing a null handle to `*_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cavity_feedback::analytics::{
    dephasing_feedback_ideal, dephasing_idle, dephasing_no_phase_correction, event_budget_configured,
    optimal_phase, BudgetReport, EventLabel,
};
use cavity_feedback::coherence::{coherence_series, fit_decay, CoherencePoint, Selection};
use cavity_feedback::hmm::{self, BaumWelchOptions, HmmModel, HmmParams};
use cavity_feedback::model::Preset;
use cavity_feedback::trajectory::{run_ensemble_traces, Outcome, ProtocolConfig, ShotTrace};
use cavity_feedback::{Error, FeedbackPhase, SystemParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    InvalidInput = 3,
    Numerical = 4,
    OutOfRange = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfPreset {
    Idle = 0,
    Repeated = 1,
}

/// Settable parameter fields. Units as in the Rust API; `ChiHz` is chi / 2 pi.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfParam {
    ChiHz = 0,
    Gamma = 1,
    GammaUp = 2,
    T1Cavity = 3,
    TM = 4,
    TG = 5,
    Theta0 = 6,
    PEGivenG = 7,
    PGGivenE = 8,
    CRo = 9,
    /// Fixed feedback phase; see [`cf_params_use_optimal_phase`].
    FeedbackPhase = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfMode {
    Idle = 0,
    Feedback = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfSelection {
    All = 0,
    NoDetection = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfEventTerm {
    /// Index into 0a, 0b, 1a, 1b, 1c, 2a, 2b.
    pub label: u32,
    pub probability: f64,
    pub coherence_re: f64,
    pub coherence_im: f64,
    pub dephasing_rate: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfCoherencePoint {
    pub t: f64,
    pub re: f64,
    pub im: f64,
    pub std_err: f64,
    pub n_samples: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfHmmParams {
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    pub gamma_up: f64,
    pub gamma: f64,
}

pub struct CfParams(SystemParams);

pub struct CfBudget(BudgetReport);

pub struct CfEnsemble {
    params: SystemParams,
    checkpoints: Vec<usize>,
    traces: Vec<ShotTrace>,
}

pub struct CfHmm {
    model: HmmModel,
    t_m: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::InvalidParams(_) | Error::Config(_) => CfStatus::InvalidParams,
        Error::InvalidInput(_) => CfStatus::InvalidInput,
        _ => CfStatus::Numerical,
    }
}

struct Fail(CfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CfStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CfStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CfStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn observations<'a>(obs: *const u8, n: usize) -> Result<Vec<Outcome>, Fail> {
    if obs.is_null() {
        return Err(null("observations"));
    }
    std::slice::from_raw_parts(obs, n)
        .iter()
        .map(|&b| match b {
            0 => Ok(Outcome::G),
            1 => Ok(Outcome::E),
            _ => Err(Fail(CfStatus::InvalidInput, format!("observation {b} is not 0 or 1"))),
        })
        .collect()
}

fn validated(p: &SystemParams) -> Result<SystemParams, Fail> {
    Ok(p.validate().map_err(Error::from)?.into_inner())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!(),
    };
    VERSION.as_ptr()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cf_params_new(preset: CfPreset, out: *mut *mut CfParams) -> CfStatus {
    guard(|| {
        let p = SystemParams::preset(match preset {
            CfPreset::Idle => Preset::Idle,
            CfPreset::Repeated => Preset::Repeated,
        });
        put(out, boxed(CfParams(p)))
    })
}

/// # Safety
/// `params` must be null or a handle from [`cf_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_params_free(params: *mut CfParams) {
    free(params)
}

/// Sets one field. Values are validated when the parameters are used.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_params_set(params: *mut CfParams, field: CfParam, value: f64) -> CfStatus {
    guard(|| {
        let p = &mut params.as_mut().ok_or_else(|| null("params"))?.0;
        match field {
            CfParam::ChiHz => *p = p.with_chi_hz(value),
            CfParam::Gamma => p.gamma = value,
            CfParam::GammaUp => p.gamma_up = value,
            CfParam::T1Cavity => p.t1_cavity = value,
            CfParam::TM => p.t_m = value,
            CfParam::TG => p.t_g = value,
            CfParam::Theta0 => p.theta_0 = value,
            CfParam::PEGivenG => p.p_e_given_g = value,
            CfParam::PGGivenE => p.p_g_given_e = value,
            CfParam::CRo => p.c_ro = value,
            CfParam::FeedbackPhase => p.feedback_phase = FeedbackPhase::Fixed(value),
        }
        Ok(())
    })
}

/// Reads one field. For `FeedbackPhase` in optimal mode this yields the
/// resolved optimal phase.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_params_get(params: *const CfParams, field: CfParam, out: *mut f64) -> CfStatus {
    guard(|| {
        let p = &get(params, "params")?.0;
        let v = match field {
            CfParam::ChiHz => p.chi_hz(),
            CfParam::Gamma => p.gamma,
            CfParam::GammaUp => p.gamma_up,
            CfParam::T1Cavity => p.t1_cavity,
            CfParam::TM => p.t_m,
            CfParam::TG => p.t_g,
            CfParam::Theta0 => p.theta_0,
            CfParam::PEGivenG => p.p_e_given_g,
            CfParam::PGGivenE => p.p_g_given_e,
            CfParam::CRo => p.c_ro,
            CfParam::FeedbackPhase => cavity_feedback::analytics::resolve_feedback_phase(p),
        };
        put(out, v)
    })
}

/// Switches the feedback phase back to the budget-optimal value.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_params_use_optimal_phase(params: *mut CfParams) -> CfStatus {
    guard(|| {
        params.as_mut().ok_or_else(|| null("params"))?.0.feedback_phase = FeedbackPhase::Optimal;
        Ok(())
    })
}

/// Checks the parameter invariants.
///
/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_params_validate(params: *const CfParams) -> CfStatus {
    guard(|| validated(&get(params, "params")?.0).map(|_| ()))
}

/// Idle, ideal-feedback and no-phase-correction dephasing rates (1/s).
///
/// # Safety
/// `params` must be a live handle; each output pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_dephasing_rates(
    params: *const CfParams,
    idle: *mut f64,
    feedback_ideal: *mut f64,
    no_phase_correction: *mut f64,
) -> CfStatus {
    guard(|| {
        let p = validated(&get(params, "params")?.0)?;
        put(idle, dephasing_idle(&p))?;
        put(feedback_ideal, dephasing_feedback_ideal(&p))?;
        put(no_phase_correction, dephasing_no_phase_correction(&p))
    })
}

/// Budget-optimal feedback phase: exact minimizer and the small-angle value
/// (NaN when undefined).
///
/// # Safety
/// `params` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cf_optimal_phase(params: *const CfParams, refined: *mut f64, small_angle: *mut f64) -> CfStatus {
    guard(|| {
        let o = optimal_phase(&validated(&get(params, "params")?.0)?);
        put(refined, o.refined)?;
        put(small_angle, o.small_angle.unwrap_or(f64::NAN))
    })
}

/// Event budget at the configured feedback phase.
///
/// # Safety
/// `params` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_budget_new(params: *const CfParams, out: *mut *mut CfBudget) -> CfStatus {
    guard(|| {
        let p = validated(&get(params, "params")?.0)?;
        put(out, boxed(CfBudget(event_budget_configured(&p))))
    })
}

/// # Safety
/// `budget` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_budget_free(budget: *mut CfBudget) {
    free(budget)
}

/// Totals of a budget: feedback phase (rad), total dephasing rate,
/// postselected rate and erasure rate (1/s).
///
/// # Safety
/// `budget` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cf_budget_totals(
    budget: *const CfBudget,
    theta_tilde: *mut f64,
    total_rate: *mut f64,
    postselected_rate: *mut f64,
    erasure_rate: *mut f64,
) -> CfStatus {
    guard(|| {
        let b = &get(budget, "budget")?.0;
        put(theta_tilde, b.theta_tilde)?;
        put(total_rate, b.total_rate)?;
        put(postselected_rate, b.postselected_rate)?;
        put(erasure_rate, b.erasure_rate)
    })
}

/// Number of event terms.
///
/// # Safety
/// `budget` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_budget_term_count(budget: *const CfBudget, out: *mut usize) -> CfStatus {
    guard(|| put(out, get(budget, "budget")?.0.terms.len()))
}

/// # Safety
/// `budget` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_budget_term(budget: *const CfBudget, index: usize, out: *mut CfEventTerm) -> CfStatus {
    guard(|| {
        let b = &get(budget, "budget")?.0;
        let t = b
            .terms
            .get(index)
            .ok_or_else(|| Fail(CfStatus::OutOfRange, format!("term {index} of {}", b.terms.len())))?;
        let label = EventLabel::ALL.iter().position(|&l| l == t.label).unwrap_or(0) as u32;
        put(
            out,
            CfEventTerm {
                label,
                probability: t.probability,
                coherence_re: t.coherence.re,
                coherence_im: t.coherence.im,
                dephasing_rate: t.dephasing_rate,
            },
        )
    })
}

/// Simulates `shots` shots of `mode` for `duration` seconds and keeps the
/// state at `points` evenly spaced times. Deterministic in `seed` regardless
/// of the calling thread pool.
///
/// # Safety
/// `params` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_ensemble_run(
    params: *const CfParams,
    mode: CfMode,
    duration: f64,
    points: usize,
    shots: usize,
    seed: u64,
    out: *mut *mut CfEnsemble,
) -> CfStatus {
    guard(|| {
        let p = validated(&get(params, "params")?.0)?;
        if !(duration > 0.0 && duration.is_finite()) || points == 0 {
            return Err(Fail(CfStatus::InvalidInput, "duration and points must be positive".into()));
        }
        let total = ((duration / p.t_m) * (1.0 + 1e-12)).floor() as usize;
        let mut checkpoints: Vec<usize> =
            (1..=points).map(|i| (i as f64 * total as f64 / points as f64).round() as usize).filter(|&c| c > 0).collect();
        checkpoints.dedup();
        if checkpoints.is_empty() {
            return Err(Fail(CfStatus::InvalidInput, "duration shorter than one cycle".into()));
        }
        let config = match mode {
            CfMode::Idle => ProtocolConfig::idle(duration, seed),
            CfMode::Feedback => ProtocolConfig::feedback(duration, seed),
        };
        let traces = run_ensemble_traces(&config, &p, shots, seed, &checkpoints)?;
        put(out, boxed(CfEnsemble { params: p, checkpoints, traces }))
    })
}

/// # Safety
/// `ensemble` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_ensemble_free(ensemble: *mut CfEnsemble) {
    free(ensemble)
}

/// Number of time points held by the ensemble.
///
/// # Safety
/// `ensemble` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_ensemble_point_count(ensemble: *const CfEnsemble, out: *mut usize) -> CfStatus {
    guard(|| put(out, get(ensemble, "ensemble")?.checkpoints.len()))
}

fn series(e: &CfEnsemble, selection: CfSelection) -> Result<Vec<(f64, CoherencePoint)>, Fail> {
    let sel = match selection {
        CfSelection::All => Selection::All,
        CfSelection::NoDetection => Selection::NoDetection,
    };
    Ok(coherence_series(&e.traces, &e.checkpoints, &e.params, sel)?)
}

/// Coherence at time point `index`.
///
/// # Safety
/// `ensemble` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_ensemble_coherence(
    ensemble: *const CfEnsemble,
    selection: CfSelection,
    index: usize,
    out: *mut CfCoherencePoint,
) -> CfStatus {
    guard(|| {
        let e = get(ensemble, "ensemble")?;
        let s = series(e, selection)?;
        let &(t, c) = s.get(index).ok_or_else(|| Fail(CfStatus::OutOfRange, format!("point {index} of {}", s.len())))?;
        put(out, CfCoherencePoint { t, re: c.value.re, im: c.value.im, std_err: c.std_err, n_samples: c.n_samples as u64 })
    })
}

/// Pure dephasing time from an exponential fit; infinite when the decay is
/// photon-loss limited.
///
/// # Safety
/// `ensemble` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_ensemble_fit_tphi(ensemble: *const CfEnsemble, selection: CfSelection, out: *mut f64) -> CfStatus {
    guard(|| {
        let e = get(ensemble, "ensemble")?;
        let fit = fit_decay(&series(e, selection)?, e.params.t1_cavity)?;
        put(out, fit.tphi.unwrap_or(f64::INFINITY))
    })
}

/// HMM from physical parameters at measurement interval `t_m`.
///
/// # Safety
/// `params` must point to a readable struct; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_new(params: *const CfHmmParams, t_m: f64, out: *mut *mut CfHmm) -> CfStatus {
    guard(|| {
        let p = get(params, "params")?;
        let lambda = HmmParams { p_e_given_g: p.p_e_given_g, p_g_given_e: p.p_g_given_e, gamma_up: p.gamma_up, gamma: p.gamma };
        let model = hmm::build_model(&lambda, t_m, None)?;
        put(out, boxed(CfHmm { model, t_m }))
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_free(model: *mut CfHmm) {
    free(model)
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_params(model: *const CfHmm, out: *mut CfHmmParams) -> CfStatus {
    guard(|| {
        let h = get(model, "model")?;
        let p = h.model.to_params(h.t_m);
        put(out, CfHmmParams { p_e_given_g: p.p_e_given_g, p_g_given_e: p.p_g_given_e, gamma_up: p.gamma_up, gamma: p.gamma })
    })
}

/// Simulates `n` observations (0 = g, 1 = e) into `obs`; hidden states go to
/// `states` unless it is null.
///
/// # Safety
/// `obs` (and `states` if non-null) must hold `n` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_simulate(model: *const CfHmm, n: usize, seed: u64, obs: *mut u8, states: *mut u8) -> CfStatus {
    guard(|| {
        let h = get(model, "model")?;
        if obs.is_null() {
            return Err(null("obs"));
        }
        let (s, o) = hmm::simulate_observations(&h.model, n, seed);
        for (i, x) in o.iter().enumerate() {
            obs.add(i).write(x.index() as u8);
        }
        if !states.is_null() {
            for (i, x) in s.iter().enumerate() {
                states.add(i).write(x.index() as u8);
            }
        }
        Ok(())
    })
}

/// Log-likelihood of `n` observations.
///
/// # Safety
/// `obs` must hold `n` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_log_likelihood(model: *const CfHmm, obs: *const u8, n: usize, out: *mut f64) -> CfStatus {
    guard(|| {
        let h = get(model, "model")?;
        put(out, hmm::log_likelihood(&observations(obs, n)?, &h.model)?)
    })
}

/// Smoothed probability of the excited state at each step.
///
/// # Safety
/// `obs` must hold `n` readable bytes and `posterior_e` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_smooth(model: *const CfHmm, obs: *const u8, n: usize, posterior_e: *mut f64) -> CfStatus {
    guard(|| {
        let h = get(model, "model")?;
        if posterior_e.is_null() {
            return Err(null("posterior_e"));
        }
        let r = hmm::smooth(&observations(obs, n)?, &h.model)?;
        for (i, w) in r.smoothed.iter().enumerate() {
            posterior_e.add(i).write(w[1]);
        }
        Ok(())
    })
}

/// Baum-Welch from `guess`; the fitted model is returned as a new handle and
/// the iteration count in `iterations` (may be null).
///
/// # Safety
/// `obs` must hold `n` readable bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cf_hmm_fit(
    guess: *const CfHmm,
    obs: *const u8,
    n: usize,
    max_iter: usize,
    tol: f64,
    out: *mut *mut CfHmm,
    iterations: *mut usize,
) -> CfStatus {
    guard(|| {
        let h = get(guess, "guess")?;
        let opts = BaumWelchOptions { max_iter, tol, ..Default::default() };
        let r = hmm::baum_welch(&observations(obs, n)?, &h.model, h.t_m, opts)?;
        if !iterations.is_null() {
            iterations.write(r.log_likelihood_trace.len().saturating_sub(1));
        }
        put(out, boxed(CfHmm { model: r.model, t_m: h.t_m }))
    })
}
