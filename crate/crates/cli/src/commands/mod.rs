mod figs;
pub mod opf;
mod powerflow;
pub mod sweep;
pub mod validate;

use anyhow::anyhow;

pub use figs::figs;
pub use opf::{opf, run_opf, OpfOutcome};
pub use powerflow::powerflow;
pub use sweep::{policy_sweep, run_sweep, SweepOutcome, SweepSeries};
pub use validate::{validate_cc, ValidationOutcome};

use crate::args::RerunArgs;
use crate::manifest::{Invocation, RunManifest};
use crate::CliError;

/// Expands `LO:HI:STEP` into `LO, LO+STEP, …` up to and including `HI`.
pub fn droop_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::input(anyhow!("droop range must be LO:HI:STEP with 0 <= LO <= HI and STEP > 0, got {spec:?}"));
    let parts: Vec<f64> = spec.split(':').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [lo, hi, step] = parts[..] else { return Err(bad()) };
    if !(lo >= 0.0 && hi >= lo && step > 0.0 && hi.is_finite()) {
        return Err(bad());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Runs an invocation with absolute paths, writing its manifest first so a
/// failed run can still be replayed.
pub fn execute(inv: Invocation) -> Result<(), CliError> {
    match &inv {
        Invocation::Powerflow(a) => powerflow(a, &RunManifest::describe(&inv)),
        Invocation::PolicySweep(a) => policy_sweep(a, &RunManifest::describe(&inv)),
        Invocation::Opf(a) => opf(a, &RunManifest::describe(&inv)),
        Invocation::ValidateCc(a) => validate_cc(a, &RunManifest::describe(&inv)).map(|_| ()),
        Invocation::Figs(a) => figs(a, &RunManifest::describe(&inv)),
    }
}

pub fn rerun(args: &RerunArgs) -> Result<(), CliError> {
    let m = RunManifest::read(&args.manifest)?;
    if m.tool_version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, running {}", m.tool_version, env!("CARGO_PKG_VERSION"));
    }
    let inv = match &args.out {
        Some(out) => m.invocation.with_out(out.clone()),
        None => m.invocation,
    };
    execute(inv.absolutized()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn droop_grid_is_inclusive() {
        assert_eq!(droop_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(droop_grid("2:2:1").unwrap(), vec![2.0]);
        assert_eq!(droop_grid("0:0.3:0.1").unwrap().len(), 4);
        assert!(droop_grid("1:0:1").is_err());
        assert!(droop_grid("0:1:0").is_err());
        assert!(droop_grid("0:1").is_err());
    }
}
