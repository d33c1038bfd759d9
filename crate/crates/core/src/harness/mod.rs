//! Command-line harness: configuration, subcommands, manifests and replay.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::{CommandReport, CheckLine};
pub use config::RunConfig;
pub use manifest::{OutputDir, OutputFile, RunManifest};

use crate::error::{Error, Result};
use crate::model::Preset;

#[derive(Debug, Parser)]
#[command(name = "cavity-feedback", version, about = "Simulate and analyse cavity dephasing under ancilla monitoring and feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shots per ensemble.
    #[arg(long, global = true)]
    pub shots: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory [default: out, or <manifest dir>/replay for replay].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    pub plots: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Cmd {
    /// Idle, feedback and postselected decays with fits and erasure rate.
    Decay,
    /// Single-excitation coherence and dephasing versus measurement interval.
    SweepTm,
    /// Dephasing rates versus ancilla excitation rate.
    SweepHeating,
    /// Event budget, dephasing maps and readout boundary.
    Budget,
    /// Hidden-Markov fit of a simulated readout record.
    Hmm,
    /// Analytic consistency checks; exits with status 4 on failure.
    Check,
    /// Re-run a manifest and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Decay,
    SweepTm,
    SweepHeating,
    Budget,
    Hmm,
    Check,
}

impl CommandKind {
    fn from_cmd(cmd: &Cmd) -> Option<Self> {
        Some(match cmd {
            Cmd::Decay => CommandKind::Decay,
            Cmd::SweepTm => CommandKind::SweepTm,
            Cmd::SweepHeating => CommandKind::SweepHeating,
            Cmd::Budget => CommandKind::Budget,
            Cmd::Hmm => CommandKind::Hmm,
            Cmd::Check => CommandKind::Check,
            Cmd::Replay { .. } => return None,
        })
    }
}

/// Result of a harness invocation.
#[derive(Debug)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub exit_code: i32,
    pub manifest: RunManifest,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `kind` into `out` on `workers` threads and writes `manifest.json`,
/// also when the command fails part way.
pub fn execute(kind: CommandKind, cfg: &RunConfig, workers: usize, plots: bool, out: &Path) -> Result<(RunManifest, CommandReport)> {
    cfg.check()?;
    let params = cfg.system_params()?;
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut dir = OutputDir::create(out)?;
    let started = manifest::unix_now();
    let result = pool.install(|| match kind {
        CommandKind::Decay => commands::decay(cfg, &params, &mut dir, plots),
        CommandKind::SweepTm => commands::sweep_tm(cfg, &params, &mut dir, plots),
        CommandKind::SweepHeating => commands::sweep_heating(cfg, &params, &mut dir, plots),
        CommandKind::Budget => commands::budget(cfg, &params, &mut dir, plots),
        CommandKind::Hmm => commands::hmm(cfg, &params, &mut dir, plots),
        CommandKind::Check => commands::check(cfg, &params, &mut dir, plots),
    });
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: kind,
        config: cfg.clone(),
        params,
        seed: cfg.seed,
        workers,
        plots,
        started_unix: started,
        finished_unix: manifest::unix_now(),
        error: result.as_ref().err().map(|e| e.to_string()),
        outputs: dir.files().to_vec(),
    };
    manifest.save(out)?;
    Ok((manifest, result?))
}

/// Re-executes a manifest into `out` and fails unless every recorded output
/// is reproduced byte for byte.
pub fn replay(manifest_path: &Path, out: &Path, workers: Option<usize>) -> Result<(RunManifest, CommandReport)> {
    let recorded = RunManifest::load(manifest_path)?;
    let (fresh, mut report) =
        execute(recorded.command, &recorded.config, workers.unwrap_or(recorded.workers), recorded.plots, out)?;
    let mut bad = recorded.mismatches(&fresh.outputs);
    for p in fresh.mismatches(&recorded.outputs) {
        if !bad.contains(&p) {
            bad.push(p);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Acceptance(format!("replay differs in {}", bad.join(", "))));
    }
    report.lines.push(format!("replay reproduced {} files", recorded.outputs.len()));
    Ok((fresh, report))
}

/// Entry point behind the binary.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let (manifest, report) = match &cli.command {
        Cmd::Replay { manifest } => {
            let out = cli.out.clone().unwrap_or_else(|| {
                manifest.parent().unwrap_or(Path::new(".")).join("replay")
            });
            replay(manifest, &out, cli.workers)?
        }
        cmd => {
            let kind = CommandKind::from_cmd(cmd).expect("replay handled above");
            let mut cfg = match &cli.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            if let Some(p) = cli.preset {
                cfg.preset = p;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(n) = cli.shots {
                cfg.shots = n;
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            execute(kind, &cfg, cli.workers.unwrap_or_else(default_workers), cli.plots, &out)?
        }
    };
    let exit_code = if report.failed { 4 } else { 0 };
    Ok(Outcome { lines: report.lines, exit_code, manifest })
}
