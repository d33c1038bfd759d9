//! TOML run configuration.
//!
//! ```toml
//! preset = "repeated"
//! seed = 7
//! shots = 20000
//!
//! [params]            # overrides on top of the preset; chi_hz is chi / 2 pi
//! gamma_up = 134.0
//! feedback_phase = "optimal"
//!
//! [decay]
//! horizon = 8e-3
//! points = 16
//!
//! [sweep_tm]
//! grid = { start = 1e-6, stop = 20e-6, count = 12 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::model::{FeedbackPhase, Preset, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Shots per ensemble.
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub sweep_tm: SweepTmConfig,
    #[serde(default)]
    pub sweep_heating: SweepHeatingConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub hmm: HmmConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_shots() -> usize {
    20_000
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::default(),
            seed: default_seed(),
            shots: default_shots(),
            params: ParamOverrides::default(),
            decay: DecayConfig::default(),
            sweep_tm: SweepTmConfig::default(),
            sweep_heating: SweepHeatingConfig::default(),
            budget: BudgetConfig::default(),
            hmm: HmmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Preset with overrides applied and validated.
    pub fn system_params(&self) -> Result<SystemParams> {
        let p = self.params.apply(SystemParams::preset(self.preset));
        Ok(p.validate()?.into_inner())
    }

    pub fn check(&self) -> Result<()> {
        if self.shots < 100 {
            return Err(Error::Config(format!("shots = {} is below the minimum of 100", self.shots)));
        }
        self.system_params()?;
        Ok(())
    }
}

/// Optional overrides of preset parameters. Units as in [`SystemParams`]
/// except `chi_hz`, which is the dispersive shift divided by 2 pi.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub chi_hz: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_up: Option<f64>,
    pub t1_cavity: Option<f64>,
    pub t_m: Option<f64>,
    pub t_g: Option<f64>,
    pub theta_0: Option<f64>,
    pub p_e_given_g: Option<f64>,
    pub p_g_given_e: Option<f64>,
    pub c_ro: Option<f64>,
    pub feedback_phase: Option<FeedbackPhase>,
}

impl ParamOverrides {
    pub fn apply(&self, mut p: SystemParams) -> SystemParams {
        if let Some(x) = self.chi_hz {
            p = p.with_chi_hz(x);
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(x) = self.$f { p.$f = x; } )* };
        }
        set!(gamma, gamma_up, t1_cavity, t_m, t_g, theta_0, p_e_given_g, p_g_given_e, c_ro, feedback_phase);
        p
    }
}

/// Grid given as explicit values or as an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match *self {
            Grid::Values(ref v) => v.clone(),
            Grid::Range { start, stop, count, log } => {
                if count == 0 {
                    return Err(Error::Config("grid count must be positive".into()));
                }
                if count == 1 {
                    vec![start]
                } else if log {
                    if !(start > 0.0 && stop > 0.0) {
                        return Err(Error::Config("log grid bounds must be positive".into()));
                    }
                    let (a, b) = (start.ln(), stop.ln());
                    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
                } else {
                    (0..count).map(|i| start + (stop - start) * i as f64 / (count - 1) as f64).collect()
                }
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grid must be non-empty and finite".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// Longest evolution time (s).
    pub horizon: f64,
    /// Number of equally spaced time points after t = 0.
    pub points: usize,
    /// Shots for the idle ensemble; defaults to the global count.
    pub idle_shots: Option<usize>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { horizon: 8e-3, points: 16, idle_shots: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepTmConfig {
    pub grid: Grid,
    /// Conditioned single-excitation samples per point.
    pub samples: usize,
    /// Full-protocol shots per point.
    pub shots: usize,
    pub horizon: f64,
    pub points: usize,
}

impl Default for SweepTmConfig {
    fn default() -> Self {
        SweepTmConfig {
            grid: Grid::Range { start: 2e-6, stop: 30e-6, count: 15, log: false },
            samples: 1_000_000,
            shots: 2000,
            horizon: 6e-3,
            points: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepHeatingConfig {
    /// Excitation rates (1/s).
    pub grid: Grid,
    pub shots: usize,
    pub horizon: f64,
    pub points: usize,
}

impl Default for SweepHeatingConfig {
    fn default() -> Self {
        SweepHeatingConfig {
            grid: Grid::Values(vec![134.0, 500.0, 1000.0, 1500.0, 2000.0]),
            shots: 4000,
            horizon: 4e-3,
            points: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    /// chi / 2 pi values for the maps (Hz).
    pub chi_hz_grid: Grid,
    pub t_m_grid: Grid,
    /// Evaluate the maps with perfect readout, no gap and no readout dephasing.
    pub ideal_maps: bool,
    /// Readout signal separation in noise widths; enables the boundary search.
    pub separation: Option<f64>,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            chi_hz_grid: Grid::Range { start: 10e3, stop: 200e3, count: 20, log: false },
            t_m_grid: Grid::Range { start: 1e-6, stop: 20e-6, count: 20, log: false },
            ideal_maps: true,
            separation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmmConfig {
    pub truth: HmmParams,
    pub t_m: f64,
    pub steps: usize,
    /// Initial guess = truth scaled by these factors.
    pub guess_scale: [f64; 4],
    pub max_iter: usize,
    pub tol: f64,
    pub estimate_initial: bool,
    /// Steps written to the reconstruction table.
    pub export_steps: usize,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            truth: HmmParams::example(),
            t_m: 2.6e-6,
            steps: 1_000_000,
            guess_scale: [1.5, 0.7, 1.4, 0.8],
            max_iter: 500,
            tol: 1e-6,
            estimate_initial: false,
            export_steps: 2000,
        }
    }
}

/// Protocol variant of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    Idle,
    Feedback,
    FeedbackPostselect,
    NoPhaseCorrection,
}

/// One swept parameter with its protocol and sampling budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub mode: ProtocolMode,
    pub shots: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(parameter: &str, grid: Vec<f64>, mode: ProtocolMode, shots: usize, seed: u64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config(format!("empty grid for {parameter}")));
        }
        if shots < 100 {
            return Err(Error::Config(format!("{shots} shots per point; at least 100 required")));
        }
        Ok(SweepSpec { parameter: parameter.into(), grid, mode, shots, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_repeated_preset() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.system_params().unwrap(), SystemParams::repeated());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml(
            "preset = \"idle\"\n[params]\nchi_hz = 82.1e3\ntheta_0 = 0.5\nfeedback_phase = -0.3\n",
        )
        .unwrap();
        let p = c.system_params().unwrap();
        assert!((p.chi_hz() - 82.1e3).abs() < 1e-6);
        assert_eq!(p.theta_0, 0.5);
        assert_eq!(p.feedback_phase, FeedbackPhase::Fixed(-0.3));
        assert_eq!(p.gamma, SystemParams::idle().gamma);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[params]\nt_m = -1.0\n").unwrap().check().is_err());
        assert!(RunConfig::from_toml("shots = 10\n").unwrap().check().is_err());
        assert!(matches!(RunConfig::from_toml("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn grids() {
        let g = Grid::Range { start: 1.0, stop: 3.0, count: 3, log: false };
        assert_eq!(g.values().unwrap(), vec![1.0, 2.0, 3.0]);
        let g = Grid::Range { start: 1.0, stop: 100.0, count: 3, log: true };
        let v = g.values().unwrap();
        assert!((v[1] - 10.0).abs() < 1e-12);
        assert!(Grid::Values(vec![]).values().is_err());
        let c = RunConfig::from_toml("[sweep_tm]\ngrid = [1e-6, 2e-6]\n").unwrap();
        assert_eq!(c.sweep_tm.grid.values().unwrap(), vec![1e-6, 2e-6]);
    }

    #[test]
    fn sweep_spec_invariants() {
        assert!(SweepSpec::new("t_m", vec![], ProtocolMode::Feedback, 1000, 1).is_err());
        assert!(SweepSpec::new("t_m", vec![1e-6], ProtocolMode::Feedback, 99, 1).is_err());
        assert!(SweepSpec::new("t_m", vec![1e-6], ProtocolMode::Idle, 100, 1).is_ok());
    }
}
