//! Centralized loss-minimizing dispatch of inverter reactive power on the
//! LinDistFlow model.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::distflow::{total_losses, FlowError, InjectionSet, PowerFlowState};
use crate::netmodel::{BusId, RadialNetwork};
use crate::policies::{capability_q, InverterSpec, PolicyError};
use crate::qpcore::{solve_qp, QpError, QpStatus, QuadProgram, RowRef};
use crate::uncertainty::{pf_capability, GaussianRow, UncertaintyError, UncertaintyModel};

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("inverter at bus {0} is not part of the network")]
    UnknownBus(BusId),
    #[error("two inverters at bus {0}")]
    DuplicateInverter(BusId),
    #[error("inverter at the root bus {0} is not supported")]
    RootInverter(BusId),
    #[error("solution is not optimal ({0:?})")]
    NotOptimal(QpStatus),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfSolution {
    pub state: PowerFlowState,
    pub injections: InjectionSet,
    pub losses: f64,
    pub status: QpStatus,
    /// Constraint labels reported by the solver when infeasible.
    pub violated: Vec<String>,
}

impl OpfSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Active output each inverter is dispatched at: the forecast mean when a
/// model is given, the reference otherwise.
pub fn dispatched_p(spec: &InverterSpec, model: Option<&UncertaintyModel>) -> Result<f64, OpfError> {
    Ok(match model {
        Some(m) => m.forecast(spec.node)?.mean,
        None => spec.p_ref,
    })
}

/// Symmetric reactive limit `|q_i| ≤ cap`: the rating at the dispatched active
/// output, or the tightened power-factor bound when a model is given.
pub fn reactive_limit(spec: &InverterSpec, model: Option<&UncertaintyModel>) -> Result<f64, OpfError> {
    Ok(match model {
        Some(m) => pf_capability(spec.node, m, spec.pf)?,
        None => capability_q(spec, spec.p_ref)?,
    })
}

pub(crate) fn check_specs(net: &RadialNetwork, specs: &[InverterSpec]) -> Result<(), OpfError> {
    let mut seen = std::collections::BTreeSet::new();
    for s in specs {
        s.validate()?;
        if !net.contains(s.node) {
            return Err(OpfError::UnknownBus(s.node));
        }
        if s.node == net.root() {
            return Err(OpfError::RootInverter(s.node));
        }
        if !seen.insert(s.node) {
            return Err(OpfError::DuplicateInverter(s.node));
        }
    }
    Ok(())
}

/// Column layout of the centralized program.
struct Layout {
    n_pv: usize,
    n_br: usize,
}

impl Layout {
    fn q_pv(&self, k: usize) -> usize {
        k
    }
    fn p_br(&self, b: usize) -> usize {
        self.n_pv + b
    }
    fn q_br(&self, b: usize) -> usize {
        self.n_pv + self.n_br + b
    }
    fn u(&self, bus: BusId) -> usize {
        self.n_pv + 2 * self.n_br + bus.index()
    }
}

/// Minimizes `Σ R (p² + q²)/V²` over inverter reactive outputs, branch flows
/// and squared voltages.
pub fn solve_centralized(
    net: &RadialNetwork,
    specs: &[InverterSpec],
    model: Option<&UncertaintyModel>,
) -> Result<OpfSolution, OpfError> {
    check_specs(net, specs)?;
    if let Some(m) = model {
        m.validate()?;
    }
    let lay = Layout { n_pv: specs.len(), n_br: net.branches().len() };
    let dim = lay.n_pv + 2 * lay.n_br + net.n_buses();
    let mut prog = QuadProgram::new(dim);
    let mut eq_labels = Vec::new();
    let mut ineq_labels = Vec::new();

    for (b, br) in net.branches().iter().enumerate() {
        let v = net.bus(br.from).v_nom;
        let w = 2.0 * br.r / (v * v);
        prog.hessian[(lay.p_br(b), lay.p_br(b))] = w;
        prog.hessian[(lay.q_br(b), lay.q_br(b))] = w;
    }

    let pv_at: BTreeMap<BusId, usize> = specs.iter().enumerate().map(|(k, s)| (s.node, k)).collect();
    let mut p_inj = BTreeMap::new();
    for s in specs {
        p_inj.insert(s.node, dispatched_p(s, model)?);
    }

    for bus in net.bus_ids() {
        let Some(b) = net.incoming_branch(bus) else { continue };
        let data = net.bus(bus);
        let mut tp = vec![(lay.p_br(b), 1.0)];
        let mut tq = vec![(lay.q_br(b), 1.0)];
        for &c in net.children(bus) {
            let bc = net.incoming_branch(c).expect("child has a feeding branch");
            tp.push((lay.p_br(bc), -1.0));
            tq.push((lay.q_br(bc), -1.0));
        }
        if let Some(&k) = pv_at.get(&bus) {
            tq.push((lay.q_pv(k), 1.0));
        }
        prog.add_eq_sparse(&tp, data.load_p - p_inj.get(&bus).copied().unwrap_or(0.0));
        eq_labels.push(format!("p-balance[{bus}]"));
        prog.add_eq_sparse(&tq, data.load_q);
        eq_labels.push(format!("q-balance[{bus}]"));
        let br = &net.branches()[b];
        prog.add_eq_sparse(
            &[(lay.u(bus), 1.0), (lay.u(br.from), -1.0), (lay.p_br(b), 2.0 * br.r), (lay.q_br(b), 2.0 * br.x)],
            0.0,
        );
        eq_labels.push(format!("voltage-drop[{}-{bus}]", br.from));
        prog.set_bounds(lay.u(bus), data.v_min * data.v_min, data.v_max * data.v_max);
    }
    let root = net.root();
    prog.add_eq_sparse(&[(lay.u(root), 1.0)], net.bus(root).v_nom.powi(2));
    eq_labels.push(format!("root-voltage[{root}]"));

    for (k, s) in specs.iter().enumerate() {
        let cap = reactive_limit(s, model)?;
        prog.add_ineq_sparse(&[(lay.q_pv(k), 1.0)], cap);
        ineq_labels.push(format!("q-upper[{}]", s.node));
        prog.add_ineq_sparse(&[(lay.q_pv(k), -1.0)], cap);
        ineq_labels.push(format!("q-lower[{}]", s.node));
    }

    let sol = solve_qp(&prog)?;
    let x = &sol.x;
    let mut injections = InjectionSet::new();
    for (k, s) in specs.iter().enumerate() {
        injections.set(s.node, p_inj[&s.node], x[lay.q_pv(k)]);
    }
    let state = PowerFlowState {
        flow_p: (0..lay.n_br).map(|b| x[lay.p_br(b)]).collect(),
        flow_q: (0..lay.n_br).map(|b| x[lay.q_br(b)]).collect(),
        u: net.bus_ids().map(|bus| x[lay.u(bus)]).collect(),
    };
    let violated = sol
        .violated_rows
        .iter()
        .map(|r| match *r {
            RowRef::Eq(i) => eq_labels[i].clone(),
            RowRef::Ineq(i) => ineq_labels[i].clone(),
            RowRef::Lower(j) | RowRef::Upper(j) => {
                let bus = BusId::from_index(j - lay.u(BusId(1)));
                format!("voltage-band[{bus}]")
            }
        })
        .collect();
    let losses = total_losses(net, &state);
    Ok(OpfSolution { state, injections, losses, status: sol.status, violated })
}

/// Operating point an inverter's local policy should track.
#[derive(Debug, Clone, PartialEq)]
pub struct SetPoint {
    pub p: f64,
    pub q: f64,
    /// `(p, q)` on the edge to each child bus.
    pub flows: BTreeMap<BusId, (f64, f64)>,
}

/// Per-inverter references read off an optimal dispatch.
pub fn reference_setpoints(
    net: &RadialNetwork,
    sol: &OpfSolution,
) -> Result<BTreeMap<BusId, SetPoint>, OpfError> {
    if !sol.is_optimal() {
        return Err(OpfError::NotOptimal(sol.status));
    }
    Ok(sol
        .injections
        .pv_q
        .keys()
        .map(|&node| {
            let flows = net.children(node).iter().map(|&c| (c, sol.state.inflow(net, c))).collect();
            (node, SetPoint { p: sol.injections.p(node), q: sol.injections.q(node), flows })
        })
        .collect())
}

/// Copies of `specs` that track the given set-points.
pub fn apply_setpoints(specs: &[InverterSpec], refs: &BTreeMap<BusId, SetPoint>) -> Vec<InverterSpec> {
    specs
        .iter()
        .map(|s| match refs.get(&s.node) {
            Some(sp) => InverterSpec { p_ref: sp.p, q_ref: sp.q, flow_refs: sp.flows.clone(), ..s.clone() },
            None => s.clone(),
        })
        .collect()
}

/// Chance constraints of a dispatch written in the random PV outputs: the two
/// power-factor rows per inverter (enforced) and both voltage-band rows per
/// bus under the LinDistFlow sensitivity of `u` to PV output (informational).
pub fn chance_rows(
    net: &RadialNetwork,
    specs: &[InverterSpec],
    model: &UncertaintyModel,
    sol: &OpfSolution,
) -> Result<Vec<GaussianRow>, OpfError> {
    let mut rows = Vec::new();
    for s in specs {
        let q = sol.injections.q(s.node);
        rows.push(GaussianRow {
            label: format!("pf-upper[{}]", s.node),
            terms: vec![(s.node, -s.pf)],
            constant: q,
            enforced: true,
        });
        rows.push(GaussianRow {
            label: format!("pf-lower[{}]", s.node),
            terms: vec![(s.node, -s.pf)],
            constant: -q,
            enforced: true,
        });
    }
    // du_j/dp_k = 2·Σ R over branches shared by the root paths of j and k.
    let paths: Vec<Vec<usize>> = net
        .bus_ids()
        .map(|b| {
            let mut p = Vec::new();
            let mut cur = b;
            while let Some(k) = net.incoming_branch(cur) {
                p.push(k);
                cur = net.branches()[k].from;
            }
            p
        })
        .collect();
    for bus in net.bus_ids() {
        if bus == net.root() {
            continue;
        }
        let mut terms = Vec::new();
        for s in specs {
            let shared: f64 = paths[bus.index()]
                .iter()
                .filter(|k| paths[s.node.index()].contains(k))
                .map(|&k| net.branches()[k].r)
                .sum();
            if shared != 0.0 {
                model.forecast(s.node)?;
                terms.push((s.node, 2.0 * shared));
            }
        }
        // u_j(p) = u_j(solution) + Σ c_k (p_k − p_k(solution))
        let u0 = sol.state.u_at(bus);
        let disp_shift: f64 = terms.iter().map(|&(n, c)| c * sol.injections.p(n)).sum();
        let b = net.bus(bus);
        rows.push(GaussianRow {
            label: format!("vmax[{bus}]"),
            terms: terms.clone(),
            constant: u0 - disp_shift - b.v_max * b.v_max,
            enforced: false,
        });
        rows.push(GaussianRow {
            label: format!("vmin[{bus}]"),
            terms: terms.iter().map(|&(n, c)| (n, -c)).collect(),
            constant: b.v_min * b.v_min - u0 + disp_shift,
            enforced: false,
        });
    }
    Ok(rows)
}

/// Per-bus voltages, per-edge flows, per-inverter injections and the total.
pub fn write_solution_csv<W: Write>(w: W, net: &RadialNetwork, sol: &OpfSolution) -> Result<(), FlowError> {
    let base = net.base_mva();
    let mut out = crate::csv_writer(w);
    out.write_record(["kind", "id", "p_pu", "q_pu", "u_pu", "p_mw", "q_mvar"])?;
    for bus in net.bus_ids() {
        let u = sol.state.u_at(bus);
        out.write_record(["bus", &bus.to_string(), "", "", &u.to_string(), "", ""])?;
    }
    for (k, br) in net.branches().iter().enumerate() {
        let (p, q) = (sol.state.flow_p[k], sol.state.flow_q[k]);
        out.write_record([
            "edge",
            &format!("{}-{}", br.from, br.to),
            &p.to_string(),
            &q.to_string(),
            "",
            &(p * base).to_string(),
            &(q * base).to_string(),
        ])?;
    }
    for (&node, &q) in &sol.injections.pv_q {
        let p = sol.injections.p(node);
        out.write_record([
            "inverter",
            &node.to_string(),
            &p.to_string(),
            &q.to_string(),
            "",
            &(p * base).to_string(),
            &(q * base).to_string(),
        ])?;
    }
    out.write_record(["losses", "total", &sol.losses.to_string(), "", "", &(sol.losses * base).to_string(), ""])?;
    out.flush()?;
    Ok(())
}
