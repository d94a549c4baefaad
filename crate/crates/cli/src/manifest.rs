use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::args::{Command, FigsArgs, OpfArgs, PowerflowArgs, SweepArgs, ValidateArgs};
use crate::commands::droop_grid;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A replayable command with all defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Powerflow(PowerflowArgs),
    PolicySweep(SweepArgs),
    Opf(OpfArgs),
    ValidateCc(ValidateArgs),
    Figs(FigsArgs),
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).with_context(|| format!("cannot resolve {}", p.display())).map_err(CliError::input)
}

impl Invocation {
    pub fn from_command(cmd: Command) -> Option<Self> {
        Some(match cmd {
            Command::Powerflow(a) => Invocation::Powerflow(a),
            Command::PolicySweep(a) => Invocation::PolicySweep(a),
            Command::Opf(a) => Invocation::Opf(a),
            Command::ValidateCc(a) => Invocation::ValidateCc(a),
            Command::Figs(a) => Invocation::Figs(a),
            Command::Rerun(_) => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Powerflow(_) => "powerflow",
            Invocation::PolicySweep(_) => "policy-sweep",
            Invocation::Opf(_) => "opf",
            Invocation::ValidateCc(_) => "validate-cc",
            Invocation::Figs(_) => "figs",
        }
    }

    /// Output directory the run writes into.
    pub fn out(&self) -> PathBuf {
        match self {
            Invocation::Powerflow(a) => a.out.clone(),
            Invocation::PolicySweep(a) => a.out.clone(),
            Invocation::Opf(a) => a.out.clone(),
            Invocation::ValidateCc(a) => a.out.clone().unwrap_or_else(|| a.solution.join("validation")),
            Invocation::Figs(a) => a.out.clone(),
        }
    }

    pub fn with_out(mut self, out: PathBuf) -> Self {
        match &mut self {
            Invocation::Powerflow(a) => a.out = out,
            Invocation::PolicySweep(a) => a.out = out,
            Invocation::Opf(a) => a.out = out,
            Invocation::ValidateCc(a) => a.out = Some(out),
            Invocation::Figs(a) => a.out = out,
        }
        self
    }

    /// Same invocation with every path made absolute, so the manifest can be
    /// replayed from any working directory.
    pub fn absolutized(self) -> Result<Self, CliError> {
        Ok(match self {
            Invocation::Powerflow(a) => Invocation::Powerflow(PowerflowArgs {
                case: absolute(&a.case)?,
                pv: a.pv.as_deref().map(absolute).transpose()?,
                out: absolute(&a.out)?,
            }),
            Invocation::PolicySweep(a) => Invocation::PolicySweep(SweepArgs {
                case: absolute(&a.case)?,
                pv: absolute(&a.pv)?,
                out: absolute(&a.out)?,
                ..a
            }),
            Invocation::Opf(a) => {
                Invocation::Opf(OpfArgs { case: absolute(&a.case)?, pv: absolute(&a.pv)?, out: absolute(&a.out)?, ..a })
            }
            Invocation::ValidateCc(a) => {
                let solution = absolute(&a.solution)?;
                let out = Some(absolute(&a.out.clone().unwrap_or_else(|| solution.join("validation")))?);
                Invocation::ValidateCc(ValidateArgs { solution, out, ..a })
            }
            Invocation::Figs(a) => Invocation::Figs(FigsArgs {
                case: absolute(&a.case)?,
                pv: absolute(&a.pv)?,
                policy_pv: absolute(&a.policy_pv)?,
                out: absolute(&a.out)?,
                ..a
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policies: Vec<String>,
    pub gate: String,
    pub delta: f64,
    pub k_v: f64,
    pub k_l: f64,
}

/// Written next to every output set. `invocation` is what `rerun` replays;
/// the other fields summarize it for readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub case: Option<PathBuf>,
    pub pv_config: Option<PathBuf>,
    pub policy_params: Option<PolicyRecord>,
    pub eps_grid: Vec<f64>,
    pub droop_grid: Vec<f64>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub invocation: Invocation,
}

impl RunManifest {
    pub fn describe(inv: &Invocation) -> Self {
        let (case, pv_config, policy_params, eps_grid, droop, seed) = match inv {
            Invocation::Powerflow(a) => (Some(a.case.clone()), a.pv.clone(), None, vec![], None, None),
            Invocation::PolicySweep(a) => (
                Some(a.case.clone()),
                Some(a.pv.clone()),
                Some(PolicyRecord {
                    policies: a.policy.split(',').map(|s| s.trim().to_string()).collect(),
                    gate: format!("{:?}", a.gate).to_lowercase(),
                    delta: a.delta,
                    k_v: a.k_v,
                    k_l: a.k_l,
                }),
                vec![],
                Some(a.droop.as_str()),
                None,
            ),
            Invocation::Opf(a) => (Some(a.case.clone()), Some(a.pv.clone()), None, a.eps.into_iter().collect(), None, None),
            Invocation::ValidateCc(a) => (None, None, None, vec![], None, Some(a.seed)),
            Invocation::Figs(a) => {
                (Some(a.case.clone()), Some(a.pv.clone()), None, a.eps.clone(), Some(a.droop.as_str()), Some(a.seed))
            }
        };
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: inv.name().to_string(),
            case,
            pv_config,
            policy_params,
            eps_grid,
            droop_grid: droop.and_then(|d| droop_grid(d).ok()).unwrap_or_default(),
            seed,
            out: inv.out(),
            invocation: inv.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::failed)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)
            .with_context(|| format!("cannot write manifest in {}", dir.display()))
            .map_err(CliError::failed)
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)
            .with_context(|| format!("cannot read manifest {}", file.display()))
            .map_err(CliError::input)?;
        serde_json::from_str(&text)
            .with_context(|| format!("malformed manifest {}", file.display()))
            .map_err(CliError::input)
    }
}
