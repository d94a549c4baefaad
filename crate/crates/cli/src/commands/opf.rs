use std::path::Path;

use anyhow::anyhow;
use feeder::admm::{run_admm, AdmmConfig, AdmmError, AdmmResult};
use feeder::config::PvConfig;
use feeder::distflow::{branch_voltage_profile, write_flow_csv, write_voltage_csv};
use feeder::netmodel::RadialNetwork;
use feeder::opf::{solve_centralized, write_solution_csv, OpfError, OpfSolution};
use feeder::uncertainty::UncertaintyModel;

use crate::args::{ModelKind, Mode, OpfArgs};
use crate::inputs::{create_dir, create_file, load_case, load_pv, num, write_table};
use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct OpfOutcome {
    pub net: RadialNetwork,
    pub cfg: PvConfig,
    /// Model the dispatch was tightened for; `None` in deterministic mode.
    pub model: Option<UncertaintyModel>,
    /// Tolerance the run was configured with (fleet file or `--eps`).
    pub epsilon: f64,
    pub solution: OpfSolution,
    pub admm: Option<AdmmResult>,
    pub converged: bool,
}

impl OpfOutcome {
    pub fn iterations(&self) -> usize {
        self.admm.as_ref().map_or(1, |r| r.iterations)
    }
}

fn admm_error(e: AdmmError) -> CliError {
    match e {
        AdmmError::AgentFault { .. } => CliError::NotConverged(e.to_string()),
        AdmmError::Config(_) | AdmmError::Opf(_) | AdmmError::Flow(_) => CliError::input(e),
        _ => CliError::failed(e),
    }
}

/// Solves without writing anything.
pub fn run_opf(a: &OpfArgs) -> Result<OpfOutcome, CliError> {
    let net = load_case(&a.case)?;
    let cfg = load_pv(&a.pv, &net)?;
    let epsilon = a.eps.unwrap_or(cfg.model.epsilon);
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(CliError::input(anyhow!("eps must lie in (0, 0.5), got {epsilon}")));
    }
    if let Some(rho) = a.rho {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(CliError::input(anyhow!("rho must be positive, got {rho}")));
        }
    }
    let model = match a.model_kind() {
        ModelKind::Deterministic => None,
        ModelKind::Chance => Some(cfg.model.with_epsilon(epsilon)),
    };
    let (solution, admm) = match a.mode {
        Mode::Centralized => {
            let sol = solve_centralized(&net, &cfg.specs, model.as_ref()).map_err(|e| match e {
                OpfError::Qp(_) => CliError::failed(e),
                _ => CliError::input(e),
            })?;
            (sol, None)
        }
        Mode::Admm => {
            let acfg = AdmmConfig { rho: a.rho, max_iters: a.max_iters, ..Default::default() };
            let r = run_admm(&net, &cfg.specs, model.as_ref(), &acfg).map_err(admm_error)?;
            (r.solution.clone(), Some(r))
        }
    };
    let converged = admm.as_ref().map_or(solution.is_optimal(), |r| r.converged);
    Ok(OpfOutcome { net, cfg, model, epsilon, solution, admm, converged })
}

/// Root-to-leaf voltage profiles: `leaf,position,bus,v_pu,v_kv`.
pub fn write_profiles(path: &Path, net: &RadialNetwork, sol: &OpfSolution) -> Result<(), CliError> {
    let mut profiles = Vec::new();
    for leaf in net.leaves() {
        profiles.push((leaf, branch_voltage_profile(net, &sol.state, leaf).map_err(CliError::failed)?));
    }
    write_table(path, |w| {
        w.write_record(["leaf", "position", "bus", "v_pu", "v_kv"])?;
        for (leaf, prof) in &profiles {
            for (i, (bus, v)) in prof.iter().enumerate() {
                w.write_record([leaf.to_string(), i.to_string(), bus.to_string(), num(*v), num(v * net.base_kv())])?;
            }
        }
        Ok(())
    })
}

pub fn write_injections(path: &Path, net: &RadialNetwork, sol: &OpfSolution) -> Result<(), CliError> {
    let base = net.base_mva();
    write_table(path, |w| {
        w.write_record(["node", "p_pu", "q_pu", "p_mw", "q_mvar"])?;
        for (&node, &q) in &sol.injections.pv_q {
            let p = sol.injections.p(node);
            w.write_record([node.to_string(), num(p), num(q), num(p * base), num(q * base)])?;
        }
        Ok(())
    })
}

pub fn write_opf(out: &Path, a: &OpfArgs, o: &OpfOutcome) -> Result<(), CliError> {
    let net = &o.net;
    let sol = &o.solution;
    write_solution_csv(create_file(&out.join("solution.csv"))?, net, sol).map_err(CliError::failed)?;
    write_voltage_csv(create_file(&out.join("buses.csv"))?, net, &sol.state).map_err(CliError::failed)?;
    write_flow_csv(create_file(&out.join("flows.csv"))?, net, &sol.state).map_err(CliError::failed)?;
    write_injections(&out.join("injections.csv"), net, sol)?;
    write_profiles(&out.join("profiles.csv"), net, sol)?;
    if let Some(r) = &o.admm {
        r.trace.write_csv(create_file(&out.join("trace.csv"))?, net.base_mva()).map_err(CliError::failed)?;
        r.bus.write_log_csv(create_file(&out.join("messages.csv"))?).map_err(CliError::failed)?;
    }
    let base = net.base_mva();
    let q = sol.injections.total_q();
    write_table(&out.join("summary.csv"), |w| {
        w.write_record([
            "mode",
            "model",
            "eps",
            "converged",
            "iterations",
            "losses_pu",
            "losses_mw",
            "total_q_pu",
            "total_q_mvar",
            "non_neighbor_messages",
        ])?;
        w.write_record([
            format!("{:?}", a.mode).to_lowercase(),
            format!("{:?}", a.model_kind()).to_lowercase(),
            num(o.epsilon),
            o.converged.to_string(),
            o.iterations().to_string(),
            num(sol.losses),
            num(sol.losses * base),
            num(q),
            num(q * base),
            o.admm.as_ref().map_or(0, |r| r.bus.non_neighbor_messages()).to_string(),
        ])
    })
}

pub fn opf(a: &OpfArgs, manifest: &RunManifest) -> Result<(), CliError> {
    let o = run_opf(a)?;
    create_dir(&a.out)?;
    manifest.write(&a.out)?;
    write_opf(&a.out, a, &o)?;
    let base = o.net.base_mva();
    println!(
        "losses: {} MW  total reactive injection: {} MVAr  iterations: {}",
        o.solution.losses * base,
        o.solution.injections.total_q() * base,
        o.iterations()
    );
    if !o.converged {
        let what = match &o.admm {
            Some(r) => format!("ADMM stopped after {} iterations", r.iterations),
            None => format!("centralized dispatch ended with {:?}", o.solution.status),
        };
        return Err(CliError::NotConverged(what));
    }
    Ok(())
}
