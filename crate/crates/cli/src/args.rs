use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "feeder", version, about = "Radial feeder power flow, inverter policies and chance-constrained ADMM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// LinDistFlow voltages and flows, optionally with PV at its reference output.
    Powerflow(PowerflowArgs),
    /// Closed-loop losses of local policies over a droop grid.
    PolicySweep(SweepArgs),
    /// Loss-minimizing reactive dispatch, centralized or by consensus ADMM.
    Opf(OpfArgs),
    /// Monte Carlo violation rates of a solved dispatch's chance constraints.
    ValidateCc(ValidateArgs),
    /// Every experiment of the 33-bus study, one subdirectory per figure.
    Figs(FigsArgs),
    /// Replays a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PowerflowArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub pv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Variant {
    /// Load at the (first) inverter bus +50%.
    #[value(name = "I")]
    I,
    /// Load at the remote bus +50%.
    #[value(name = "II")]
    II,
    #[value(name = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum GateArg {
    /// Droop acts when the summed child-flow excess is nonnegative.
    Excess,
    /// Droop acts when the summed child-flow deficit is nonnegative.
    Deficit,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub pv: PathBuf,
    /// Comma-separated policy names.
    #[arg(long, default_value = "none,flow-pq,flow-q,loss-min")]
    pub policy: String,
    /// Droop grid `LO:HI:STEP`.
    #[arg(long, default_value = "0:20:0.25")]
    pub droop: String,
    #[arg(long, value_enum, default_value_t = Variant::I)]
    pub variant: Variant,
    /// Bus whose load is raised in variant II.
    #[arg(long, default_value_t = 33)]
    pub remote_bus: usize,
    #[arg(long, value_enum, default_value_t = GateArg::Excess)]
    pub gate: GateArg,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub k_v: f64,
    #[arg(long, default_value_t = 0.5)]
    pub k_l: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Mode {
    Centralized,
    Admm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ModelKind {
    /// Rating-only reactive limits, PV at its forecast.
    Deterministic,
    /// Power-factor limits tightened for the Gaussian forecast error.
    Chance,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OpfArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub pv: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Centralized)]
    pub mode: Mode,
    /// Defaults to deterministic for centralized and chance for admm.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Violation tolerance; overrides the fleet file.
    #[arg(long)]
    pub eps: Option<f64>,
    /// ADMM penalty; defaults to 1/V² at the root.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl OpfArgs {
    pub fn model_kind(&self) -> ModelKind {
        self.model.unwrap_or(match self.mode {
            Mode::Centralized => ModelKind::Deterministic,
            Mode::Admm => ModelKind::Chance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    /// Output directory of an `opf` run.
    pub solution: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Defaults to `<solution>/validation`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FigsArgs {
    #[arg(long, default_value = "data/case33bw.m")]
    pub case: PathBuf,
    /// PV fleet for the dispatch experiments.
    #[arg(long, default_value = "data/pv_fleet33.cfg")]
    pub pv: PathBuf,
    /// Single-inverter setup for the policy sweeps.
    #[arg(long, default_value = "data/pv_case1.cfg")]
    pub policy_pv: PathBuf,
    #[arg(long, default_value = "0:20:0.25")]
    pub droop: String,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1,0.2")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct RerunArgs {
    /// A `manifest.json`, or a directory holding one.
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
