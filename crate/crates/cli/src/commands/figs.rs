use std::path::{Path, PathBuf};

use feeder::admm::write_injection_comparison_csv;
use feeder::exec::Execution;

use super::opf::{write_opf, write_profiles};
use super::sweep::write_sweep;
use super::validate::validate_cc;
use super::{run_opf, run_sweep, OpfOutcome};
use crate::args::{FigsArgs, GateArg, Mode, ModelKind, OpfArgs, SweepArgs, ValidateArgs, Variant};
use crate::inputs::{create_dir, create_file, num, write_table};
use crate::manifest::{Invocation, RunManifest};
use crate::CliError;

/// Tolerance whose dispatch is shown in the profile and per-inverter figures.
const SHOWCASE_EPS: f64 = 0.05;

enum Job {
    Sweep(SweepArgs),
    Opf(OpfArgs),
}

enum Done {
    Sweep,
    Opf(Box<OpfOutcome>),
}

fn run_job(job: &Job) -> Result<Done, CliError> {
    match job {
        Job::Sweep(a) => {
            let o = run_sweep(a)?;
            create_dir(&a.out)?;
            RunManifest::describe(&Invocation::PolicySweep(a.clone())).write(&a.out)?;
            write_sweep(&a.out, &o)?;
            Ok(Done::Sweep)
        }
        Job::Opf(a) => {
            let o = run_opf(a)?;
            create_dir(&a.out)?;
            RunManifest::describe(&Invocation::Opf(a.clone())).write(&a.out)?;
            write_opf(&a.out, a, &o)?;
            if !o.converged {
                return Err(CliError::NotConverged(format!("{} did not converge", a.out.display())));
            }
            Ok(Done::Opf(Box::new(o)))
        }
    }
}

fn job_name(job: &Job, root: &Path) -> String {
    let out = match job {
        Job::Sweep(a) => &a.out,
        Job::Opf(a) => &a.out,
    };
    out.strip_prefix(root).unwrap_or(out).display().to_string()
}

fn eps_tag(e: f64) -> String {
    format!("eps_{e}")
}

fn write_traces(dir: &Path, runs: &[(f64, &OpfOutcome)], central: Option<&OpfOutcome>, losses: bool) -> Result<(), CliError> {
    create_dir(dir)?;
    for (e, o) in runs {
        let Some(r) = &o.admm else { continue };
        let base = o.net.base_mva();
        write_table(&dir.join(format!("trace_{}.csv", eps_tag(*e))), |w| {
            if losses {
                w.write_record(["iter", "losses_pu", "losses_mw"])?;
            } else {
                w.write_record(["iter", "total_q_pu", "total_q_mvar"])?;
            }
            for t in r.trace.records() {
                let v = if losses { t.losses } else { t.total_q };
                w.write_record([t.iter.to_string(), num(v), num(v * base)])?;
            }
            Ok(())
        })?;
    }
    if let Some(c) = central {
        let base = c.net.base_mva();
        let v = if losses { c.solution.losses } else { c.solution.injections.total_q() };
        write_table(&dir.join("centralized.csv"), |w| {
            if losses {
                w.write_record(["losses_pu", "losses_mw"])?;
            } else {
                w.write_record(["total_q_pu", "total_q_mvar"])?;
            }
            w.write_record([num(v), num(v * base)])
        })?;
    }
    Ok(())
}

pub fn figs(a: &FigsArgs, manifest: &RunManifest) -> Result<(), CliError> {
    let root = a.out.clone();
    create_dir(&root)?;
    manifest.write(&root)?;
    super::droop_grid(&a.droop)?;

    let sweep = |variant: Variant, dir: &str| SweepArgs {
        case: a.case.clone(),
        pv: a.policy_pv.clone(),
        policy: "none,flow-pq,flow-q,loss-min".into(),
        droop: a.droop.clone(),
        variant,
        remote_bus: 33,
        gate: GateArg::Excess,
        delta: 0.05,
        k_v: 0.5,
        k_l: 0.5,
        out: root.join("fig3").join(dir),
    };
    let opf = |mode: Mode, model: ModelKind, eps: Option<f64>, dir: PathBuf| OpfArgs {
        case: a.case.clone(),
        pv: a.pv.clone(),
        mode,
        model: Some(model),
        eps,
        rho: None,
        max_iters: 500,
        out: dir,
    };
    let mut jobs = vec![
        Job::Sweep(sweep(Variant::I, "case_I")),
        Job::Sweep(sweep(Variant::II, "case_II")),
        Job::Opf(opf(Mode::Centralized, ModelKind::Deterministic, None, root.join("runs/centralized"))),
    ];
    for &e in &a.eps {
        jobs.push(Job::Opf(opf(Mode::Admm, ModelKind::Chance, Some(e), root.join("runs").join(format!("admm_{}", eps_tag(e))))));
    }

    // Sub-runs write disjoint directories, so they can go in parallel.
    let results = Execution::default().map(&jobs, run_job);
    let mut status: Vec<(String, String)> = Vec::new();
    let mut failures: Vec<CliError> = Vec::new();
    let mut central: Option<OpfOutcome> = None;
    let mut admm: Vec<(f64, OpfOutcome, PathBuf)> = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let name = job_name(job, &root);
        match res {
            Ok(done) => {
                status.push((name, "ok".into()));
                if let (Job::Opf(args), Done::Opf(o)) = (job, done) {
                    match args.mode {
                        Mode::Centralized => central = Some(*o),
                        Mode::Admm => admm.push((args.eps.unwrap_or(o.epsilon), *o, args.out.clone())),
                    }
                }
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                status.push((name, e.to_string()));
                failures.push(e);
            }
        }
    }

    for (_, _, dir) in &admm {
        let v = ValidateArgs { solution: dir.clone(), samples: a.samples, seed: a.seed, out: Some(dir.join("validation")) };
        let name = format!("{}/validation", dir.strip_prefix(&root).unwrap_or(dir).display());
        match validate_cc(&v, &RunManifest::describe(&Invocation::ValidateCc(v.clone()))) {
            Ok(o) => status.push((name, if o.pass { "ok".into() } else { "violation rates above eps".into() })),
            Err(e) => {
                status.push((name, e.to_string()));
                failures.push(e);
            }
        }
    }

    let runs: Vec<(f64, &OpfOutcome)> = admm.iter().map(|(e, o, _)| (*e, o)).collect();
    write_traces(&root.join("fig4"), &runs, central.as_ref(), false)?;
    write_traces(&root.join("fig5"), &runs, central.as_ref(), true)?;
    let showcase = runs.iter().min_by(|x, y| (x.0 - SHOWCASE_EPS).abs().total_cmp(&(y.0 - SHOWCASE_EPS).abs()));
    if let Some((_, o)) = showcase {
        create_dir(&root.join("fig6"))?;
        write_profiles(&root.join("fig6/profiles.csv"), &o.net, &o.solution)?;
    }
    if let Some(c) = &central {
        create_dir(&root.join("fig7"))?;
        write_profiles(&root.join("fig7/profiles.csv"), &c.net, &c.solution)?;
    }
    if let (Some((_, o)), Some(c)) = (showcase, &central) {
        create_dir(&root.join("fig8"))?;
        write_injection_comparison_csv(
            create_file(&root.join("fig8/comparison.csv"))?,
            o.net.base_mva(),
            &o.solution.injections,
            &c.solution.injections,
        )
        .map_err(CliError::failed)?;
    }
    for fig in ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8"] {
        if root.join(fig).is_dir() {
            manifest.write(&root.join(fig))?;
        }
    }
    write_table(&root.join("status.csv"), |w| {
        w.write_record(["run", "status"])?;
        for (n, s) in &status {
            w.write_record([n, s])?;
        }
        Ok(())
    })?;

    println!("{} sub-runs, {} failed; results in {}", status.len(), failures.len(), root.display());
    if failures.is_empty() {
        return Ok(());
    }
    let n = failures.len();
    Err(failures
        .into_iter()
        .min_by_key(|e| match e {
            CliError::Input(_) => 0,
            CliError::NotConverged(_) => 1,
            CliError::Failed(_) => 2,
        })
        .map(|e| match e {
            CliError::Input(err) => CliError::Input(err.context(format!("{n} sub-run(s) failed"))),
            other => other,
        })
        .expect("nonempty"))
}
