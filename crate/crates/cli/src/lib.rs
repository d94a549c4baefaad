//! Batch front end: every command reads a case and an optional PV fleet,
//! writes plot-ready CSVs plus a `manifest.json` into its output directory,
//! and can be replayed from that manifest.

pub mod args;
pub mod commands;
pub mod inputs;
pub mod manifest;

use std::fmt;

pub use args::{Cli, Command};
pub use manifest::{Invocation, RunManifest};

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input: exit code 2.
    Input(anyhow::Error),
    /// A solver stopped without converging; artifacts were still written. Exit code 3.
    NotConverged(String),
    /// Anything else (I/O while writing results, internal faults): exit code 1.
    Failed(anyhow::Error),
}

impl CliError {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        CliError::Input(e.into())
    }

    pub fn failed(e: impl Into<anyhow::Error>) -> Self {
        CliError::Failed(e.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "input error: {e:#}"),
            CliError::NotConverged(msg) => write!(f, "not converged: {msg}"),
            CliError::Failed(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rerun(a) => commands::rerun(&a),
        other => {
            let inv = Invocation::from_command(other).ok_or_else(|| CliError::input(anyhow::anyhow!("nothing to run")))?;
            commands::execute(inv.absolutized()?)
        }
    }
}
