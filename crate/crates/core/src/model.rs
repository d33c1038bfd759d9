//! Physical parameters of the cavity/ancilla system and the measurement
//! protocol.
//!
//! All angles are stored in radians and all rates in 1/s. The dispersive
//! shift is configured externally as `chi/2pi` in Hz and converted once, at
//! the configuration boundary, by [`SystemParams::with_chi_hz`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Result;

/// Readout-induced coherence loss per measurement, `1 - C_RO`, inferred from
/// the postselected dephasing rate (182 ms)^-1 minus the decayed-excitation
/// contribution (1678 ms)^-1, at a 2.6 us measurement interval.
pub fn derived_c_ro(t_m: f64) -> f64 {
    const POSTSELECTED_RATE: f64 = 1.0 / 182e-3;
    const DECAYED_EXCITATION_RATE: f64 = 1.0 / 1678e-3;
    1.0 - t_m * (POSTSELECTED_RATE - DECAYED_EXCITATION_RATE)
}

/// State of the two-level ancilla.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AncillaState {
    G,
    E,
}

impl AncillaState {
    pub fn flipped(self) -> Self {
        match self {
            AncillaState::G => AncillaState::E,
            AncillaState::E => AncillaState::G,
        }
    }

    pub fn index(self) -> usize {
        match self {
            AncillaState::G => 0,
            AncillaState::E => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            AncillaState::G
        } else {
            AncillaState::E
        }
    }
}

/// Cavity phase correction applied per detected excitation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FeedbackPhase {
    /// Use the phase minimizing the total error-budget dephasing rate.
    #[default]
    Optimal,
    Fixed(f64),
}

impl Serialize for FeedbackPhase {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FeedbackPhase::Optimal => s.serialize_str("optimal"),
            FeedbackPhase::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for FeedbackPhase {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(FeedbackPhase::Fixed(v)),
            Raw::Text(s) if s == "optimal" => Ok(FeedbackPhase::Optimal),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected \"optimal\" or a number, got {s:?}"
            ))),
        }
    }
}

/// Full parameter set of the system and protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Dispersive shift (rad/s).
    pub chi: f64,
    /// Ancilla decay rate `1/T1` (1/s).
    pub gamma: f64,
    /// Ancilla thermal excitation rate (1/s).
    pub gamma_up: f64,
    /// Cavity single-photon lifetime (s).
    pub t1_cavity: f64,
    /// Measurement interval (s).
    pub t_m: f64,
    /// Gap between state inference and the reset pulse (s).
    pub t_g: f64,
    /// Offset phase picked up per measurement of an excited ancilla (rad).
    pub theta_0: f64,
    pub p_e_given_g: f64,
    pub p_g_given_e: f64,
    /// Cavity coherence factor per ancilla measurement, in (0, 1].
    pub c_ro: f64,
    pub feedback_phase: FeedbackPhase,
}

/// Named parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Ancilla parameters measured without repeated readout.
    Idle,
    /// Ancilla parameters under repetitive measurement.
    #[default]
    Repeated,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "idle" => Ok(Preset::Idle),
            "repeated" => Ok(Preset::Repeated),
            other => Err(format!("unknown preset {other:?} (expected idle or repeated)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Idle => "idle",
            Preset::Repeated => "repeated",
        })
    }
}

const CHI_HZ: f64 = 73.06e3;
const T1_CAVITY: f64 = 1.57e-3;
const T_M: f64 = 2.6e-6;
const T_G: f64 = 1.24e-6;
const P_E_GIVEN_G: f64 = 2.16e-4;
const P_G_GIVEN_E: f64 = 1.4e-2;

impl SystemParams {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Idle => Self::idle(),
            Preset::Repeated => Self::repeated(),
        }
    }

    /// Device values without repeated measurement: `T1 = 67 us`, `Gamma_up = 119 Hz`.
    pub fn idle() -> Self {
        Self::base(1.0 / 67.0e-6, 119.0)
    }

    /// Device values under repeated measurement: `T1 = 31.5 us`, `Gamma_up = 134 Hz`.
    pub fn repeated() -> Self {
        Self::base(1.0 / 31.5e-6, 134.0)
    }

    fn base(gamma: f64, gamma_up: f64) -> Self {
        SystemParams {
            chi: 2.0 * PI * CHI_HZ,
            gamma,
            gamma_up,
            t1_cavity: T1_CAVITY,
            t_m: T_M,
            t_g: T_G,
            theta_0: 0.0,
            p_e_given_g: P_E_GIVEN_G,
            p_g_given_e: P_G_GIVEN_E,
            c_ro: derived_c_ro(T_M),
            feedback_phase: FeedbackPhase::Optimal,
        }
    }

    /// Same system with a perfect, instantaneous, non-invasive readout:
    /// no confusion errors, no readout dephasing and no detection-to-reset gap.
    pub fn ideal_measurement(mut self) -> Self {
        self.p_e_given_g = 0.0;
        self.p_g_given_e = 0.0;
        self.c_ro = 1.0;
        self.t_g = 0.0;
        self
    }

    pub fn with_chi_hz(mut self, chi_over_2pi: f64) -> Self {
        self.chi = 2.0 * PI * chi_over_2pi;
        self
    }

    pub fn chi_hz(&self) -> f64 {
        self.chi / (2.0 * PI)
    }

    pub fn validate(self) -> Result<ValidatedParams, Violation> {
        validate(self)
    }
}

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("non-finite value for {name}")]
    NonFinite { name: &'static str },
    #[error("non-positive rate {name} = {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("non-positive time {name} = {value}")]
    NonPositiveTime { name: &'static str, value: f64 },
    #[error("negative time {name} = {value}")]
    NegativeTime { name: &'static str, value: f64 },
    #[error("probability out of range: {name} = {value}")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("readout coherence factor c_ro = {0} outside (0, 1]")]
    CroOutOfRange(f64),
    #[error("gap t_g = {t_g} must be shorter than the measurement interval t_m = {t_m}")]
    GapTooLong { t_g: f64, t_m: f64 },
    #[error("excitation rate gamma_up = {gamma_up} must be below the decay rate gamma = {gamma}")]
    HeatingExceedsDecay { gamma_up: f64, gamma: f64 },
}

/// Non-fatal conditions under which the small-excitation approximations degrade.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Warning {
    /// `gamma_up / gamma` above 0.1; excitations are no longer independent.
    HeatingNotSmall { ratio: f64 },
    /// `gamma_up * t_m` above 0.01; more than one excitation per interval is likely.
    ExcitationPerIntervalNotSmall { p_up: f64 },
}

/// Parameters that passed [`validate`], with any attached warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    params: SystemParams,
    warnings: Vec<Warning>,
}

impl ValidatedParams {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn into_inner(self) -> SystemParams {
        self.params
    }
}

impl std::ops::Deref for ValidatedParams {
    type Target = SystemParams;

    fn deref(&self) -> &SystemParams {
        &self.params
    }
}

pub fn validate(params: SystemParams) -> Result<ValidatedParams, Violation> {
    let p = &params;
    let named = [
        ("chi", p.chi),
        ("gamma", p.gamma),
        ("gamma_up", p.gamma_up),
        ("t1_cavity", p.t1_cavity),
        ("t_m", p.t_m),
        ("t_g", p.t_g),
        ("theta_0", p.theta_0),
        ("p_e_given_g", p.p_e_given_g),
        ("p_g_given_e", p.p_g_given_e),
        ("c_ro", p.c_ro),
    ];
    for (name, value) in named {
        if !value.is_finite() {
            return Err(Violation::NonFinite { name });
        }
    }
    if let FeedbackPhase::Fixed(v) = p.feedback_phase {
        if !v.is_finite() {
            return Err(Violation::NonFinite { name: "feedback_phase" });
        }
    }
    for (name, value) in [("chi", p.chi), ("gamma", p.gamma), ("gamma_up", p.gamma_up)] {
        if value <= 0.0 {
            return Err(Violation::NonPositiveRate { name, value });
        }
    }
    for (name, value) in [("t1_cavity", p.t1_cavity), ("t_m", p.t_m)] {
        if value <= 0.0 {
            return Err(Violation::NonPositiveTime { name, value });
        }
    }
    if p.t_g < 0.0 {
        return Err(Violation::NegativeTime { name: "t_g", value: p.t_g });
    }
    for (name, value) in [("p_e_given_g", p.p_e_given_g), ("p_g_given_e", p.p_g_given_e)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Violation::ProbabilityOutOfRange { name, value });
        }
    }
    if !(p.c_ro > 0.0 && p.c_ro <= 1.0) {
        return Err(Violation::CroOutOfRange(p.c_ro));
    }
    if p.t_g >= p.t_m {
        return Err(Violation::GapTooLong { t_g: p.t_g, t_m: p.t_m });
    }
    if p.gamma_up >= p.gamma {
        return Err(Violation::HeatingExceedsDecay { gamma_up: p.gamma_up, gamma: p.gamma });
    }

    let mut warnings = Vec::new();
    let ratio = p.gamma_up / p.gamma;
    if ratio > 0.1 {
        warnings.push(Warning::HeatingNotSmall { ratio });
    }
    let p_up = p.gamma_up * p.t_m;
    if p_up > 0.01 {
        warnings.push(Warning::ExcitationPerIntervalNotSmall { p_up });
    }
    Ok(ValidatedParams { params, warnings })
}

/// Per-interval transition probabilities of the ancilla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedRates {
    /// Excitation probability per interval, `gamma_up * t_m` (first order).
    pub p_up: f64,
    /// Decay probability per interval, `1 - exp(-gamma * t_m)`.
    pub p_down: f64,
    /// Thermal population `gamma_up / (gamma_up + gamma)`.
    pub n_th: f64,
}

pub fn derive_rates(params: &ValidatedParams) -> DerivedRates {
    derive_rates_unchecked(params)
}

pub(crate) fn derive_rates_unchecked(p: &SystemParams) -> DerivedRates {
    DerivedRates {
        p_up: p.gamma_up * p.t_m,
        p_down: -(-p.gamma * p.t_m).exp_m1(),
        n_th: p.gamma_up / (p.gamma_up + p.gamma),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults_are_accepted() {
        let v = validate(SystemParams::idle()).unwrap();
        assert!(v.warnings().is_empty());
        assert!((v.chi_hz() - 73.06e3).abs() < 1e-6);
        assert!((1.0 / v.gamma - 67e-6).abs() < 1e-15);
        validate(SystemParams::repeated()).unwrap();
    }

    #[test]
    fn zero_interval_is_rejected() {
        let mut p = SystemParams::idle();
        p.t_m = 0.0;
        let err = validate(p).unwrap_err();
        assert!(matches!(err, Violation::NonPositiveTime { name: "t_m", .. }));
        assert!(err.to_string().contains("non-positive time"));
    }

    #[test]
    fn probability_above_one_is_rejected() {
        let mut p = SystemParams::idle();
        p.p_e_given_g = 1.5;
        let err = validate(p).unwrap_err();
        assert!(err.to_string().contains("probability out of range"));
    }

    #[test]
    fn other_violations() {
        let mut p = SystemParams::idle();
        p.t_g = p.t_m;
        assert!(matches!(validate(p), Err(Violation::GapTooLong { .. })));
        let mut p = SystemParams::idle();
        p.gamma = -1.0;
        assert!(matches!(validate(p), Err(Violation::NonPositiveRate { name: "gamma", .. })));
        let mut p = SystemParams::idle();
        p.c_ro = 0.0;
        assert!(matches!(validate(p), Err(Violation::CroOutOfRange(_))));
        let mut p = SystemParams::idle();
        p.gamma_up = 2.0 * p.gamma;
        assert!(matches!(validate(p), Err(Violation::HeatingExceedsDecay { .. })));
        let mut p = SystemParams::idle();
        p.chi = f64::NAN;
        assert!(matches!(validate(p), Err(Violation::NonFinite { name: "chi" })));
    }

    #[test]
    fn strong_heating_warns() {
        let mut p = SystemParams::idle();
        p.gamma_up = 0.5 * p.gamma;
        let v = validate(p).unwrap();
        assert!(v.warnings().iter().any(|w| matches!(w, Warning::HeatingNotSmall { .. })));
        assert!(v.warnings().iter().any(|w| matches!(w, Warning::ExcitationPerIntervalNotSmall { .. })));
    }

    #[test]
    fn derived_rates_at_table_values() {
        let v = validate(SystemParams::idle()).unwrap();
        let r = derive_rates(&v);
        assert!((r.p_up - 119.0 * 2.6e-6).abs() < 1e-18);
        assert!((r.p_up - 3e-4).abs() < 0.1e-4);
        assert!((r.p_down - (1.0 - (-2.6e-6f64 / 67e-6).exp())).abs() < 1e-15);
        // Thermal population 0.80 +- 0.05 %.
        assert!((r.n_th - 0.0080).abs() < 0.0005, "n_th = {}", r.n_th);
    }

    #[test]
    fn fast_decay_saturates_p_down() {
        let mut p = SystemParams::idle();
        p.gamma = 1e12;
        p.gamma_up = 1.0;
        let r = derive_rates_unchecked(&p);
        assert!((r.p_down - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derived_c_ro_value() {
        let one_minus = 1.0 - derived_c_ro(2.6e-6);
        assert!((one_minus - 1.27e-5).abs() < 0.05e-5, "{one_minus}");
    }

    #[test]
    fn feedback_phase_serde() {
        let fixed: FeedbackPhase = serde_json::from_str("-0.75").unwrap();
        assert_eq!(fixed, FeedbackPhase::Fixed(-0.75));
        let opt: FeedbackPhase = serde_json::from_str("\"optimal\"").unwrap();
        assert_eq!(opt, FeedbackPhase::Optimal);
        assert_eq!(serde_json::to_string(&FeedbackPhase::Optimal).unwrap(), "\"optimal\"");
        assert!(serde_json::from_str::<FeedbackPhase>("\"best\"").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rates_monotone_in_heating(a in 1.0f64..1000.0, b in 1.0f64..1000.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assume!(hi - lo > 1e-9);
                let mut p = SystemParams::idle();
                p.gamma_up = lo;
                let r_lo = derive_rates_unchecked(&p);
                p.gamma_up = hi;
                let r_hi = derive_rates_unchecked(&p);
                prop_assert!(r_hi.p_up > r_lo.p_up);
                prop_assert!(r_hi.n_th > r_lo.n_th);
            }

            #[test]
            fn p_down_taylor_bound(x in 1e-8f64..1e-2) {
                let mut p = SystemParams::idle();
                p.gamma = x / p.t_m;
                let r = derive_rates_unchecked(&p);
                prop_assert!((r.p_down - x).abs() <= x * x / 2.0 * (1.0 + 1e-9));
            }
        }
    }
}
