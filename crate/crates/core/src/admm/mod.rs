//! Consensus ADMM over per-bus agents that talk only to feeder neighbors.
//!
//! Each round: every agent minimizes its local augmented Lagrangian, copies
//! are exchanged with neighbors and averaged into consensus values, consensus
//! voltages are sent down to children, and every agent updates its duals.

pub mod agent;
pub mod bus;

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::distflow::{solve_lindistflow, total_losses, FlowError, InjectionSet};
use crate::exec::Execution;
use crate::netmodel::{BusId, RadialNetwork};
use crate::opf::{check_specs, dispatched_p, reactive_limit, OpfError, OpfSolution};
use crate::policies::InverterSpec;
use crate::qpcore::QpStatus;
use crate::uncertainty::UncertaintyModel;

pub use agent::{Agent, AdmmNodeState, AgentData, Balance, GlobalView};
pub use bus::{LogEntry, Message, MessageBus, Payload};

#[derive(Debug, Error)]
pub enum AdmmError {
    #[error("bus {node}: local problem failed ({status:?}): {rows:?}")]
    AgentFault { node: BusId, status: Option<QpStatus>, rows: Vec<String> },
    #[error("message from {from} to {to} crosses more than one edge")]
    ProtocolViolation { from: BusId, to: BusId },
    #[error("duplicate {round}-round message from {from} to {to}")]
    DuplicateMessage { from: BusId, to: BusId, round: usize },
    #[error("round {round} stalled: no {kind} message from {from} to {to}")]
    RoundStall { round: usize, from: BusId, to: BusId, kind: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    /// Penalty; `None` uses `1/V₁²` of the root.
    pub rho: Option<f64>,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Add each inverter's reactive droop law as an equality row.
    pub policy_rows: bool,
    pub exec: Execution,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig { rho: None, max_iters: 500, tol_primal: 1e-4, tol_dual: 1e-4, policy_rows: false, exec: Execution::default() }
    }
}

impl AdmmConfig {
    pub fn rho_for(&self, net: &RadialNetwork) -> f64 {
        self.rho.unwrap_or_else(|| 1.0 / net.bus(net.root()).v_nom.powi(2))
    }
}

/// Consensus values of all shared quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusGlobals {
    pub q_node: BTreeMap<BusId, f64>,
    /// Keyed by the receiving bus of each edge.
    pub q_edge: BTreeMap<BusId, f64>,
    pub u_node: BTreeMap<BusId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub total_q: f64,
    pub losses: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    records: Vec<TraceRecord>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        assert!(self.records.last().is_none_or(|r| r.iter < rec.iter), "trace iterations must increase");
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, w: W, base_mva: f64) -> Result<(), csv::Error> {
        let mut out = crate::csv_writer(w);
        out.write_record(["iter", "primal_res", "dual_res", "total_q_pu", "total_q_mvar", "losses_pu", "losses_mw"])?;
        for r in &self.records {
            out.write_record([
                r.iter.to_string(),
                r.primal_residual.to_string(),
                r.dual_residual.to_string(),
                r.total_q.to_string(),
                (r.total_q * base_mva).to_string(),
                r.losses.to_string(),
                (r.losses * base_mva).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub solution: OpfSolution,
    pub trace: ConvergenceTrace,
    pub converged: bool,
    pub iterations: usize,
    pub agents: Vec<Agent>,
    pub bus: MessageBus,
}

impl AdmmResult {
    pub fn globals(&self) -> ConsensusGlobals {
        collect_globals(&self.agents)
    }
}

fn collect_globals(agents: &[Agent]) -> ConsensusGlobals {
    let mut g = ConsensusGlobals { q_node: BTreeMap::new(), q_edge: BTreeMap::new(), u_node: BTreeMap::new() };
    for a in agents {
        g.u_node.insert(a.node(), a.view.u_own);
        if a.data.parent.is_some() {
            g.q_edge.insert(a.node(), a.view.q_in);
        }
        if matches!(a.data.balance, Balance::Inverter { .. }) {
            g.q_node.insert(a.node(), a.injection_from_globals());
        }
    }
    g
}

/// Inverter outputs `q_i = Σq⁺ − q⁻ + Q_i` read from the agents' copies.
pub fn recover_injections(agents: &[Agent], p: &BTreeMap<BusId, f64>) -> InjectionSet {
    let mut inj = InjectionSet::new();
    for a in agents {
        if let Balance::Inverter { .. } = a.data.balance {
            inj.set(a.node(), p.get(&a.node()).copied().unwrap_or(0.0), a.injection());
        }
    }
    inj
}

/// Builds the agents with copies and consensus values at the forecast power
/// flow (inverters idle) and zero duals.
pub fn build_agents(
    net: &RadialNetwork,
    specs: &[InverterSpec],
    model: Option<&UncertaintyModel>,
    cfg: &AdmmConfig,
) -> Result<(Vec<Agent>, BTreeMap<BusId, f64>), AdmmError> {
    check_specs(net, specs)?;
    let mut forecast = InjectionSet::new();
    let mut p_map = BTreeMap::new();
    for s in specs {
        let p = dispatched_p(s, model)?;
        forecast.set(s.node, p, 0.0);
        p_map.insert(s.node, p);
    }
    let state = solve_lindistflow(net, &forecast)?;
    let by_node: BTreeMap<BusId, &InverterSpec> = specs.iter().map(|s| (s.node, s)).collect();
    let mut agents = Vec::with_capacity(net.n_buses());
    for bus in net.bus_ids() {
        let b = net.bus(bus);
        let parent = net.parent(bus);
        let children = net.children(bus).to_vec();
        let (r, x, v_from, p_in) = match net.incoming_branch(bus) {
            Some(k) => {
                let br = &net.branches()[k];
                (br.r, br.x, net.bus(br.from).v_nom, state.flow_p[k])
            }
            None => (0.0, 0.0, 1.0, 0.0),
        };
        let balance = match by_node.get(&bus) {
            None => Balance::Passive,
            Some(s) => {
                let cap = reactive_limit(s, model)?;
                let droop = cfg.policy_rows.then(|| {
                    let refs = s.flow_refs.iter().map(|(&c, &(_, q))| (c, q)).collect();
                    (s.q_ref, s.droop_q, refs)
                });
                Balance::Inverter { cap, droop }
            }
        };
        let q_in = state.inflow(net, bus).1;
        let q_out: BTreeMap<BusId, f64> = children.iter().map(|&c| (c, state.inflow(net, c).1)).collect();
        let u_own = state.u_at(bus);
        let u_parent = parent.map(|p| state.u_at(p)).unwrap_or(0.0);
        let st = AdmmNodeState {
            node: bus,
            q_plus: q_out.clone(),
            q_minus: if parent.is_some() { q_in } else { 0.0 },
            u_plus: u_own,
            u_minus: u_parent,
            lam_q_plus: children.iter().map(|&c| (c, 0.0)).collect(),
            lam_q_minus: 0.0,
            lam_u_plus: 0.0,
            lam_u_minus: 0.0,
        };
        let data = AgentData {
            parent,
            children,
            r,
            x,
            v_from,
            p_in,
            load_q: b.load_q,
            u_min: b.v_min * b.v_min,
            u_max: b.v_max * b.v_max,
            u_fixed: parent.is_none().then_some(b.v_nom * b.v_nom),
            balance,
        };
        agents.push(Agent::new(st, GlobalView { q_in, q_out, u_own, u_parent }, data));
    }
    Ok((agents, p_map))
}

/// Runs synchronous ADMM rounds until both residuals drop below tolerance or
/// `max_iters` rounds have passed.
pub fn run_admm(
    net: &RadialNetwork,
    specs: &[InverterSpec],
    model: Option<&UncertaintyModel>,
    cfg: &AdmmConfig,
) -> Result<AdmmResult, AdmmError> {
    let rho = cfg.rho_for(net);
    if !(rho > 0.0) || !(cfg.tol_primal > 0.0) || !(cfg.tol_dual > 0.0) {
        return Err(AdmmError::Config("rho and tolerances must be positive".into()));
    }
    if let Some(m) = model {
        m.validate().map_err(OpfError::from)?;
    }
    let (mut agents, p_map) = build_agents(net, specs, model, cfg)?;
    let mut bus = MessageBus::new(net);
    let mut trace = ConvergenceTrace::default();
    let mut converged = false;
    let mut iterations = 0;

    for round in 1..=cfg.max_iters {
        iterations = round;
        let outcomes = cfg.exec.map_mut(&mut agents, |a| a.local_minimize(rho));
        for o in outcomes {
            o?;
        }

        agent::deliver(&mut bus, agents.iter().flat_map(|a| a.local_messages(round)).collect())?;
        let mut change: f64 = 0.0;
        for a in agents.iter_mut() {
            let inbox = bus.take(a.node());
            change = change.max(a.receive_locals(&inbox, round)?);
        }
        agent::deliver(&mut bus, agents.iter().flat_map(|a| a.global_messages(round)).collect())?;
        for a in agents.iter_mut() {
            let inbox = bus.take(a.node());
            change = change.max(a.receive_globals(&inbox, round)?);
        }

        let primal = agents.iter().map(Agent::primal_residual).fold(0.0, f64::max);
        let dual = rho * change;
        for a in agents.iter_mut() {
            a.dual_update(rho);
        }

        let inj = recover_injections(&agents, &p_map);
        let losses = total_losses(net, &solve_lindistflow(net, &inj)?);
        trace.push(TraceRecord { iter: round, primal_residual: primal, dual_residual: dual, total_q: inj.total_q(), losses });
        if primal < cfg.tol_primal && dual < cfg.tol_dual {
            converged = true;
            break;
        }
    }

    let injections = recover_injections(&agents, &p_map);
    let state = solve_lindistflow(net, &injections)?;
    let losses = total_losses(net, &state);
    let status = if converged { QpStatus::Optimal } else { QpStatus::IterationLimit };
    let solution = OpfSolution { state, injections, losses, status, violated: Vec::new() };
    Ok(AdmmResult { solution, trace, converged, iterations, agents, bus })
}

/// Per-inverter outputs of two dispatches side by side.
pub fn write_injection_comparison_csv<W: Write>(
    w: W,
    base_mva: f64,
    admm: &InjectionSet,
    centralized: &InjectionSet,
) -> Result<(), csv::Error> {
    let mut out = crate::csv_writer(w);
    out.write_record(["node", "q_pu", "q_mvar", "centralized_q_pu", "centralized_q_mvar"])?;
    for (&node, &q) in &admm.pv_q {
        let c = centralized.q(node);
        out.write_record([node.to_string(), q.to_string(), (q * base_mva).to_string(), c.to_string(), (c * base_mva).to_string()])?;
    }
    out.flush()?;
    Ok(())
}
