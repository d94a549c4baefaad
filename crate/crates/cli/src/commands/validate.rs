use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use feeder::distflow::{solve_lindistflow, total_losses, InjectionSet};
use feeder::exec::Execution;
use feeder::netmodel::BusId;
use feeder::opf::{chance_rows, OpfSolution};
use feeder::qpcore::QpStatus;
use feeder::uncertainty::{monte_carlo_violation, ViolationRate};

use crate::args::{OpfArgs, ValidateArgs};
use crate::inputs::{create_dir, load_case, load_pv, num, write_table};
use crate::manifest::{Invocation, RunManifest};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub epsilon: f64,
    pub rates: Vec<ViolationRate>,
    /// Every enforced row within `ε` plus its binomial allowance.
    pub pass: bool,
}

/// Reads the per-inverter outputs an `opf` run wrote.
fn read_injections(path: &Path) -> Result<InjectionSet, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(CliError::input)?;
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut inj = InjectionSet::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::input(anyhow!("{}: {e}", path.display())))?;
        let field = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::input(anyhow!("{}: bad row {:?}", path.display(), rec)))
        };
        inj.set(BusId(field(0)? as usize), field(1)?, field(2)?);
    }
    Ok(inj)
}

pub fn run_validation(a: &ValidateArgs) -> Result<ValidationOutcome, CliError> {
    let m = RunManifest::read(&a.solution)?;
    let Invocation::Opf(opf) = &m.invocation else {
        return Err(CliError::input(anyhow!("{} does not hold an opf run", a.solution.display())));
    };
    let OpfArgs { case, pv, eps, .. } = opf;
    let net = load_case(case)?;
    let cfg = load_pv(pv, &net)?;
    let epsilon = eps.unwrap_or(cfg.model.epsilon);
    let model = cfg.model.with_epsilon(epsilon);
    let injections = read_injections(&a.solution.join("injections.csv"))?;
    let state = solve_lindistflow(&net, &injections).map_err(CliError::input)?;
    let losses = total_losses(&net, &state);
    let sol = OpfSolution { state, injections, losses, status: QpStatus::Optimal, violated: Vec::new() };
    let rows = chance_rows(&net, &cfg.specs, &model, &sol).map_err(CliError::input)?;
    let rates = monte_carlo_violation(&model, &rows, a.samples, a.seed, Execution::default()).map_err(CliError::input)?;
    let pass = rates.iter().filter(|r| r.enforced).all(|r| r.passes(epsilon));
    Ok(ValidationOutcome { epsilon, rates, pass })
}

pub fn validate_cc(a: &ValidateArgs, manifest: &RunManifest) -> Result<ValidationOutcome, CliError> {
    let o = run_validation(a)?;
    let out = manifest.out.clone();
    create_dir(&out)?;
    manifest.write(&out)?;
    write_table(&out.join("violations.csv"), |w| {
        w.write_record([
            "constraint",
            "enforced",
            "violations",
            "samples",
            "rate",
            "ci_low",
            "ci_high",
            "analytic_rate",
            "analytic_margin",
            "pass",
        ])?;
        for r in &o.rates {
            // 3-sigma normal interval around the empirical rate.
            let half = 3.0 * (r.rate * (1.0 - r.rate) / r.samples.max(1) as f64).sqrt();
            w.write_record([
                r.label.clone(),
                r.enforced.to_string(),
                r.violations.to_string(),
                r.samples.to_string(),
                num(r.rate),
                num((r.rate - half).max(0.0)),
                num((r.rate + half).min(1.0)),
                num(r.analytic_rate),
                num(r.analytic_margin),
                r.passes(o.epsilon).to_string(),
            ])?;
        }
        Ok(())
    })?;
    let enforced: Vec<&ViolationRate> = o.rates.iter().filter(|r| r.enforced).collect();
    let worst = enforced.iter().map(|r| r.rate).fold(0.0, f64::max);
    write_table(&out.join("summary.csv"), |w| {
        w.write_record(["eps", "samples", "seed", "enforced_rows", "worst_enforced_rate", "allowance", "pass"])?;
        let allowance = o.rates.first().map_or(0.0, |r| r.binomial_tol);
        w.write_record([
            num(o.epsilon),
            a.samples.to_string(),
            a.seed.to_string(),
            enforced.len().to_string(),
            num(worst),
            num(allowance),
            o.pass.to_string(),
        ])
    })?;
    println!(
        "{} enforced constraints, worst violation rate {worst} (eps {}): {}",
        enforced.len(),
        o.epsilon,
        if o.pass { "PASS" } else { "FAIL" }
    );
    Ok(o)
}
