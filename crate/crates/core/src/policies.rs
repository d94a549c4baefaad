//! Local inverter control laws and closed-loop simulation against LinDistFlow.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::distflow::{solve_lindistflow, total_losses, FlowError, InjectionSet, PowerFlowState};
use crate::netmodel::{BusId, NetError, RadialNetwork};

pub const MAX_CLOSED_LOOP_ITERS: usize = 1000;
pub const CLOSED_LOOP_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("bus {node}: active output {p} exceeds rating {s}")]
    Capability { node: BusId, p: f64, s: f64 },
    #[error("bus {node}: no reference flow for child edge to {child}")]
    MissingReference { node: BusId, child: BusId },
    #[error("invalid inverter at bus {node}: {msg}")]
    BadSpec { node: BusId, msg: String },
    #[error("invalid policy parameters: {0}")]
    BadParams(String),
    #[error("closed loop did not settle within {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64, trace: Vec<f64> },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverterSpec {
    pub node: BusId,
    pub s_rated: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    /// Reference `(p, q)` flows on the edges to each child bus.
    pub flow_refs: BTreeMap<BusId, (f64, f64)>,
    pub droop_p: f64,
    pub droop_q: f64,
    pub pf: f64,
    /// Extra active power available above `p_ref` from co-located storage.
    pub p_headroom: f64,
}

impl InverterSpec {
    pub fn new(node: BusId, s_rated: f64, p_ref: f64) -> Self {
        InverterSpec {
            node,
            s_rated,
            p_ref,
            q_ref: 0.0,
            flow_refs: BTreeMap::new(),
            droop_p: 0.0,
            droop_q: 0.0,
            pf: 1.0,
            p_headroom: 0.0,
        }
    }

    /// Sets both droop gains.
    pub fn with_droop(mut self, k: f64) -> Self {
        self.droop_p = k;
        self.droop_q = k;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: &str| Err(PolicyError::BadSpec { node: self.node, msg: msg.to_string() });
        if !(self.s_rated >= 0.0 && self.s_rated.is_finite()) {
            return bad("rating must be finite and nonnegative");
        }
        if !(0.0..=self.s_rated).contains(&self.p_ref) {
            return bad("reference active output outside [0, S]");
        }
        if !(self.droop_p >= 0.0 && self.droop_q >= 0.0) {
            return bad("negative droop");
        }
        if !(self.pf > 0.0 && self.pf <= 1.0) {
            return bad("power factor outside (0, 1]");
        }
        if !(self.p_headroom >= 0.0) {
            return bad("negative headroom");
        }
        if !self.q_ref.is_finite() || self.flow_refs.values().any(|(p, q)| !p.is_finite() || !q.is_finite()) {
            return bad("non-finite reference");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Hold the reference set-points.
    NoControl,
    ConstantPf,
    VoltageSigmoid,
    LossMin,
    Hybrid,
    FlowReactive,
    FlowActiveReactive,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::NoControl,
        PolicyKind::ConstantPf,
        PolicyKind::VoltageSigmoid,
        PolicyKind::LossMin,
        PolicyKind::Hybrid,
        PolicyKind::FlowReactive,
        PolicyKind::FlowActiveReactive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::NoControl => "none",
            PolicyKind::ConstantPf => "constant-pf",
            PolicyKind::VoltageSigmoid => "voltage",
            PolicyKind::LossMin => "loss-min",
            PolicyKind::Hybrid => "hybrid",
            PolicyKind::FlowReactive => "flow-q",
            PolicyKind::FlowActiveReactive => "flow-pq",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// When the flow droop switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DroopGate {
    /// Active while the summed measured child flow is at or above its reference.
    #[default]
    ExcessFlow,
    /// Active while the summed reference is at or above the measured flow.
    DeficitFlow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    pub delta: f64,
    pub k_v: f64,
    pub k_l: f64,
    pub gate: DroopGate,
}

impl PolicyParams {
    pub fn new(kind: PolicyKind) -> Self {
        PolicyParams { kind, delta: 0.05, k_v: 0.5, k_l: 0.5, gate: DroopGate::default() }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if matches!(self.kind, PolicyKind::VoltageSigmoid | PolicyKind::Hybrid) && !(self.delta > 0.0) {
            return Err(PolicyError::BadParams(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.k_v >= 0.0 && self.k_l >= 0.0) {
            return Err(PolicyError::BadParams("hybrid weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeasurement {
    pub v: f64,
    pub load_p: f64,
    pub load_q: f64,
    /// Measured `(p, q)` on the edge to each child bus.
    pub child_flows: BTreeMap<BusId, (f64, f64)>,
}

/// Reads what the inverter at `node` can see in `state`.
pub fn measure(net: &RadialNetwork, state: &PowerFlowState, node: BusId) -> LocalMeasurement {
    let bus = net.bus(node);
    let child_flows = net.children(node).iter().map(|&c| (c, state.inflow(net, c))).collect();
    LocalMeasurement { v: state.v_at(node), load_p: bus.load_p, load_q: bus.load_q, child_flows }
}

/// Largest reactive magnitude available at active output `p`.
pub fn capability_q(spec: &InverterSpec, p_actual: f64) -> Result<f64, PolicyError> {
    if p_actual > spec.s_rated || p_actual < 0.0 {
        return Err(PolicyError::Capability { node: spec.node, p: p_actual, s: spec.s_rated });
    }
    Ok((spec.s_rated * spec.s_rated - p_actual * p_actual).max(0.0).sqrt())
}

fn clip(q: f64, cap: f64) -> f64 {
    q.clamp(-cap, cap)
}

fn ref_capability(spec: &InverterSpec) -> f64 {
    capability_q(spec, spec.p_ref.clamp(0.0, spec.s_rated)).unwrap_or(0.0)
}

/// Keeps the power factor of the net injection, with `p = p̂`.
pub fn policy_constant_pf(spec: &InverterSpec, meas: &LocalMeasurement) -> f64 {
    let dp = spec.p_ref - meas.load_p;
    let raw = (dp * dp + meas.load_q * meas.load_q) / (spec.pf * spec.pf) - dp * dp;
    clip(raw, ref_capability(spec))
}

/// Smooth volt-var response: injects below nominal voltage, absorbs above.
pub fn policy_voltage(spec: &InverterSpec, meas: &LocalMeasurement, params: &PolicyParams, v_nom: f64) -> f64 {
    let cap = ref_capability(spec);
    let s = ((v_nom - meas.v) / params.delta).tanh();
    clip(meas.load_q.min(cap * s), cap)
}

/// Cancels the local reactive load as far as the rating allows.
pub fn policy_loss_min(spec: &InverterSpec, meas: &LocalMeasurement) -> f64 {
    clip(meas.load_q, ref_capability(spec))
}

pub fn policy_hybrid(spec: &InverterSpec, meas: &LocalMeasurement, params: &PolicyParams, v_nom: f64) -> f64 {
    let l = policy_loss_min(spec, meas);
    let v = policy_voltage(spec, meas, params, v_nom);
    clip(params.k_l * l + params.k_v * v, ref_capability(spec))
}

/// Summed `(Δp, Δq)` of measured child flows above their references.
fn flow_excess(spec: &InverterSpec, meas: &LocalMeasurement) -> Result<(f64, f64), PolicyError> {
    let mut dp = 0.0;
    let mut dq = 0.0;
    for (&child, &(p, q)) in &meas.child_flows {
        let &(pr, qr) = spec
            .flow_refs
            .get(&child)
            .ok_or(PolicyError::MissingReference { node: spec.node, child })?;
        dp += p - pr;
        dq += q - qr;
    }
    Ok((dp, dq))
}

fn gated(gate: DroopGate, excess: f64) -> bool {
    match gate {
        DroopGate::ExcessFlow => excess >= 0.0,
        DroopGate::DeficitFlow => excess <= 0.0,
    }
}

/// Reactive droop on the child reactive flows.
pub fn policy_flow_reactive(spec: &InverterSpec, meas: &LocalMeasurement, gate: DroopGate) -> Result<f64, PolicyError> {
    let (_, dq) = flow_excess(spec, meas)?;
    let raw = if gated(gate, dq) { spec.q_ref + spec.droop_q * dq } else { spec.q_ref };
    Ok(clip(raw, ref_capability(spec)))
}

/// Joint active/reactive droop. Over the rating, `|q|` shrinks first, then
/// `p` moves back toward `p̂`.
pub fn policy_flow_active_reactive(
    spec: &InverterSpec,
    meas: &LocalMeasurement,
    gate: DroopGate,
) -> Result<(f64, f64), PolicyError> {
    let (dp, dq) = flow_excess(spec, meas)?;
    let q = if gated(gate, dq) { spec.q_ref + spec.droop_q * dq } else { spec.q_ref };
    let p = if gated(gate, dp) { spec.p_ref + spec.droop_p * dp } else { spec.p_ref };
    let p = p.clamp(0.0, spec.p_ref + spec.p_headroom);
    Ok(project_rating(p, q, spec.s_rated))
}

/// Pulls `(p, q)` into the disc of radius `s`: `|q|` first, then `p`.
pub fn project_rating(p: f64, q: f64, s: f64) -> (f64, f64) {
    if p * p + q * q <= s * s {
        return (p, q);
    }
    if p <= s {
        let qmax = (s * s - p * p).max(0.0).sqrt();
        (p, clip(q, qmax))
    } else {
        (s, 0.0)
    }
}

/// Output `(p, q)` of the inverter under `params`.
pub fn evaluate(
    spec: &InverterSpec,
    meas: &LocalMeasurement,
    params: &PolicyParams,
    v_nom: f64,
) -> Result<(f64, f64), PolicyError> {
    let p = spec.p_ref;
    Ok(match params.kind {
        PolicyKind::NoControl => (p, spec.q_ref),
        PolicyKind::ConstantPf => (p, policy_constant_pf(spec, meas)),
        PolicyKind::VoltageSigmoid => (p, policy_voltage(spec, meas, params, v_nom)),
        PolicyKind::LossMin => (p, policy_loss_min(spec, meas)),
        PolicyKind::Hybrid => (p, policy_hybrid(spec, meas, params, v_nom)),
        PolicyKind::FlowReactive => (p, policy_flow_reactive(spec, meas, params.gate)?),
        PolicyKind::FlowActiveReactive => policy_flow_active_reactive(spec, meas, params.gate)?,
    })
}

/// Multiplicative load changes applied before a closed-loop run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Perturbation {
    pub load_scale: BTreeMap<BusId, f64>,
}

impl Perturbation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn scale_load(bus: BusId, factor: f64) -> Self {
        Perturbation { load_scale: BTreeMap::from([(bus, factor)]) }
    }

    pub fn apply(&self, net: &RadialNetwork) -> Result<RadialNetwork, PolicyError> {
        let mut out = net.clone();
        for (&bus, &f) in &self.load_scale {
            out = out.with_scaled_load(bus, f)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub state: PowerFlowState,
    pub injections: InjectionSet,
    pub iterations: usize,
    pub losses: f64,
}

/// Reference set-points as an injection set.
pub fn reference_injections(specs: &[InverterSpec]) -> InjectionSet {
    let mut inj = InjectionSet::new();
    for s in specs {
        inj.set(s.node, s.p_ref, s.q_ref);
    }
    inj
}

/// Synchronous fixed-point iteration: every inverter reacts to the same
/// solved state, then the flow is re-solved, until no output moves by more
/// than [`CLOSED_LOOP_TOL`].
pub fn closed_loop_simulate(
    net: &RadialNetwork,
    specs: &[InverterSpec],
    params: &PolicyParams,
    perturbation: &Perturbation,
) -> Result<ClosedLoopResult, PolicyError> {
    params.validate()?;
    for s in specs {
        s.validate()?;
        if !net.contains(s.node) {
            return Err(PolicyError::Net(NetError::UnknownBus(s.node)));
        }
    }
    let net = perturbation.apply(net)?;
    let mut inj = reference_injections(specs);
    let mut trace = Vec::new();
    for iter in 1..=MAX_CLOSED_LOOP_ITERS {
        let state = solve_lindistflow(&net, &inj)?;
        let mut next = InjectionSet::new();
        let mut change: f64 = 0.0;
        for s in specs {
            let meas = measure(&net, &state, s.node);
            let (p, q) = evaluate(s, &meas, params, net.bus(s.node).v_nom)?;
            change = change.max((p - inj.p(s.node)).abs()).max((q - inj.q(s.node)).abs());
            next.set(s.node, p, q);
        }
        trace.push(change);
        if change < CLOSED_LOOP_TOL {
            let state = solve_lindistflow(&net, &next)?;
            let losses = total_losses(&net, &state);
            return Ok(ClosedLoopResult { state, injections: next, iterations: iter, losses });
        }
        inj = next;
    }
    Err(PolicyError::NonConvergence {
        iterations: MAX_CLOSED_LOOP_ITERS,
        last_change: trace.last().copied().unwrap_or(f64::NAN),
        trace,
    })
}
