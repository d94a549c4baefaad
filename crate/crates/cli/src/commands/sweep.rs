use anyhow::anyhow;
use feeder::distflow::InjectionSet;
use feeder::exec::Execution;
use feeder::netmodel::{BusId, RadialNetwork};
use feeder::opf::{apply_setpoints, reference_setpoints, solve_centralized};
use feeder::policies::{closed_loop_simulate, DroopGate, InverterSpec, Perturbation, PolicyKind, PolicyParams};

use super::droop_grid;
use crate::args::{GateArg, SweepArgs, Variant};
use crate::inputs::{create_dir, load_case, load_pv, num, write_table};
use crate::manifest::RunManifest;
use crate::CliError;

/// Outputs stop changing once they agree with the last grid point to this.
const SATURATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub k: f64,
    /// `(losses, injections, iterations)`, or `None` when the loop diverged.
    pub result: Option<(f64, InjectionSet, usize)>,
}

#[derive(Debug, Clone)]
pub struct SweepSeries {
    pub policy: PolicyKind,
    pub points: Vec<SweepPoint>,
    /// Smallest droop from which every output equals the last one.
    pub breakpoint: Option<f64>,
}

impl SweepSeries {
    pub fn losses(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.result.as_ref().map(|r| r.0)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub net: RadialNetwork,
    pub specs: Vec<InverterSpec>,
    pub perturbed_bus: Option<BusId>,
    pub series: Vec<SweepSeries>,
}

fn same_outputs(a: &InjectionSet, b: &InjectionSet) -> bool {
    a.pv_q.keys().all(|&n| (a.p(n) - b.p(n)).abs() <= SATURATION_TOL && (a.q(n) - b.q(n)).abs() <= SATURATION_TOL)
}

fn breakpoint(points: &[SweepPoint]) -> Option<f64> {
    let last = points.last()?.result.as_ref()?;
    let mut bp = None;
    for p in points.iter().rev() {
        match &p.result {
            Some(r) if same_outputs(&r.1, &last.1) => bp = Some(p.k),
            _ => break,
        }
    }
    bp
}

/// Closed-loop sweep with references taken from the deterministic optimum of
/// the unperturbed feeder.
pub fn run_sweep(a: &SweepArgs) -> Result<SweepOutcome, CliError> {
    let net = load_case(&a.case)?;
    let cfg = load_pv(&a.pv, &net)?;
    let kinds: Vec<PolicyKind> = a
        .policy
        .split(',')
        .map(|s| PolicyKind::from_name(s.trim()).ok_or_else(|| CliError::input(anyhow!("unknown policy {s:?}"))))
        .collect::<Result<_, _>>()?;
    let grid = droop_grid(&a.droop)?;
    if cfg.specs.is_empty() {
        return Err(CliError::input(anyhow!("{}: no inverters", a.pv.display())));
    }
    let perturbed_bus = match a.variant {
        Variant::I => Some(cfg.specs[0].node),
        Variant::II => Some(BusId(a.remote_bus)),
        Variant::None => None,
    };
    if let Some(b) = perturbed_bus {
        if !net.contains(b) {
            return Err(CliError::input(anyhow!("bus {b} is not in the case")));
        }
    }
    let perturbation = perturbed_bus.map(|b| Perturbation::scale_load(b, 1.5)).unwrap_or_default();

    let opt = solve_centralized(&net, &cfg.specs, None).map_err(CliError::input)?;
    let refs = reference_setpoints(&net, &opt).map_err(|e| CliError::NotConverged(format!("reference dispatch: {e}")))?;
    let specs = apply_setpoints(&cfg.specs, &refs);

    let gate = match a.gate {
        GateArg::Excess => DroopGate::ExcessFlow,
        GateArg::Deficit => DroopGate::DeficitFlow,
    };
    let mut series = Vec::new();
    for kind in kinds {
        let params = PolicyParams { kind, delta: a.delta, k_v: a.k_v, k_l: a.k_l, gate };
        params.validate().map_err(CliError::input)?;
        let points = Execution::default().map(&grid, |&k| {
            let sp: Vec<InverterSpec> = specs.iter().map(|s| s.clone().with_droop(k)).collect();
            let result = closed_loop_simulate(&net, &sp, &params, &perturbation).ok().map(|r| (r.losses, r.injections, r.iterations));
            SweepPoint { k, result }
        });
        series.push(SweepSeries { policy: kind, breakpoint: breakpoint(&points), points });
    }
    Ok(SweepOutcome { net, specs, perturbed_bus, series })
}

pub fn write_sweep(out: &std::path::Path, o: &SweepOutcome) -> Result<(), CliError> {
    let base = o.net.base_mva();
    write_table(&out.join("references.csv"), |w| {
        w.write_record(["node", "p_ref_pu", "q_ref_pu", "p_ref_mw", "q_ref_mvar"])?;
        for s in &o.specs {
            w.write_record([s.node.to_string(), num(s.p_ref), num(s.q_ref), num(s.p_ref * base), num(s.q_ref * base)])?;
        }
        Ok(())
    })?;
    for s in &o.series {
        write_table(&out.join(format!("sweep_{}.csv", s.policy.name())), |w| {
            w.write_record([
                "k",
                "total_loss_pu",
                "total_loss_mw",
                "total_p_pu",
                "total_q_pu",
                "iterations",
                "saturated",
                "breakpoint",
                "diverged",
            ])?;
            for p in &s.points {
                let saturated = s.breakpoint.is_some_and(|b| p.k >= b);
                let at_bp = s.breakpoint == Some(p.k);
                match &p.result {
                    Some((loss, inj, it)) => w.write_record([
                        num(p.k),
                        num(*loss),
                        num(loss * base),
                        num(inj.pv_p.values().sum()),
                        num(inj.total_q()),
                        it.to_string(),
                        saturated.to_string(),
                        at_bp.to_string(),
                        "false".into(),
                    ])?,
                    None => w.write_record([num(p.k), "".into(), "".into(), "".into(), "".into(), "".into(), "false".into(), "false".into(), "true".into()])?,
                }
            }
            Ok(())
        })?;
    }
    write_table(&out.join("summary.csv"), |w| {
        w.write_record(["policy", "breakpoint_k", "loss_at_first_k_mw", "loss_at_last_k_mw", "diverged_points"])?;
        for s in &o.series {
            let l = s.losses();
            let cell = |x: Option<&Option<f64>>| x.copied().flatten().map(|v| num(v * base)).unwrap_or_default();
            w.write_record([
                s.policy.name().to_string(),
                s.breakpoint.map(num).unwrap_or_default(),
                cell(l.first()),
                cell(l.last()),
                l.iter().filter(|x| x.is_none()).count().to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn policy_sweep(a: &SweepArgs, manifest: &RunManifest) -> Result<(), CliError> {
    let o = run_sweep(a)?;
    create_dir(&a.out)?;
    manifest.write(&a.out)?;
    write_sweep(&a.out, &o)?;
    for s in &o.series {
        let bp = s.breakpoint.map(|b| format!("breakpoint K = {b}")).unwrap_or_else(|| "no breakpoint in range".into());
        let div = s.points.iter().filter(|p| p.result.is_none()).count();
        println!("{:>12}: {bp}{}", s.policy.name(), if div > 0 { format!(", {div} diverged") } else { String::new() });
    }
    Ok(())
}
