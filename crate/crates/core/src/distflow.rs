//! LinDistFlow evaluation and loss accounting.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::netmodel::{subtree_order, BusId, RadialNetwork};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("injection at unknown bus {0}")]
    UnknownBus(BusId),
    #[error("non-finite injection at bus {0}")]
    NonFinite(BusId),
    #[error("state does not match the network ({0})")]
    Mismatch(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Active/reactive PV injections keyed by bus (p.u.).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectionSet {
    pub pv_p: BTreeMap<BusId, f64>,
    pub pv_q: BTreeMap<BusId, f64>,
}

impl InjectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, bus: BusId, p: f64, q: f64) {
        self.pv_p.insert(bus, p);
        self.pv_q.insert(bus, q);
    }

    pub fn p(&self, bus: BusId) -> f64 {
        self.pv_p.get(&bus).copied().unwrap_or(0.0)
    }

    pub fn q(&self, bus: BusId) -> f64 {
        self.pv_q.get(&bus).copied().unwrap_or(0.0)
    }

    pub fn total_q(&self) -> f64 {
        self.pv_q.values().sum()
    }

    fn check(&self, net: &RadialNetwork) -> Result<(), FlowError> {
        for (&bus, &v) in self.pv_p.iter().chain(self.pv_q.iter()) {
            if !net.contains(bus) {
                return Err(FlowError::UnknownBus(bus));
            }
            if !v.is_finite() {
                return Err(FlowError::NonFinite(bus));
            }
        }
        Ok(())
    }
}

/// Branch flows (indexed like `RadialNetwork::branches`) and squared bus voltages.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowState {
    pub flow_p: Vec<f64>,
    pub flow_q: Vec<f64>,
    pub u: Vec<f64>,
}

impl PowerFlowState {
    pub fn u_at(&self, bus: BusId) -> f64 {
        self.u[bus.index()]
    }

    pub fn v_at(&self, bus: BusId) -> f64 {
        self.u[bus.index()].sqrt()
    }

    /// Flow on the branch feeding `bus`; zero at the root.
    pub fn inflow(&self, net: &RadialNetwork, bus: BusId) -> (f64, f64) {
        match net.incoming_branch(bus) {
            Some(k) => (self.flow_p[k], self.flow_q[k]),
            None => (0.0, 0.0),
        }
    }

    fn check(&self, net: &RadialNetwork) -> Result<(), FlowError> {
        if self.flow_p.len() != net.branches().len() || self.flow_q.len() != net.branches().len() {
            return Err(FlowError::Mismatch("flow vector length"));
        }
        if self.u.len() != net.n_buses() {
            return Err(FlowError::Mismatch("voltage vector length"));
        }
        Ok(())
    }
}

/// Backward sweep for the flows, forward sweep for the squared voltages.
pub fn solve_lindistflow(net: &RadialNetwork, inj: &InjectionSet) -> Result<PowerFlowState, FlowError> {
    inj.check(net)?;
    let order = subtree_order(net);
    let m = net.branches().len();
    let mut flow_p = vec![0.0; m];
    let mut flow_q = vec![0.0; m];
    // Downstream demand accumulated per bus, children before parents.
    let mut sub_p = vec![0.0; net.n_buses()];
    let mut sub_q = vec![0.0; net.n_buses()];
    for &bus in order.iter().rev() {
        let b = net.bus(bus);
        let mut p = b.load_p - inj.p(bus);
        let mut q = b.load_q - inj.q(bus);
        for &c in net.children(bus) {
            p += sub_p[c.index()];
            q += sub_q[c.index()];
        }
        sub_p[bus.index()] = p;
        sub_q[bus.index()] = q;
        if let Some(k) = net.incoming_branch(bus) {
            flow_p[k] = p;
            flow_q[k] = q;
        }
    }
    let mut u = vec![0.0; net.n_buses()];
    let root = net.root();
    u[root.index()] = net.bus(root).v_nom.powi(2);
    for &bus in order.iter().skip(1) {
        let k = net.incoming_branch(bus).expect("non-root bus has a feeding branch");
        let br = &net.branches()[k];
        u[bus.index()] = u[br.from.index()] - 2.0 * (br.r * flow_p[k] + br.x * flow_q[k]);
    }
    Ok(PowerFlowState { flow_p, flow_q, u })
}

/// Per-branch loss term `R (p² + q²) / V_from²` with nominal `V_from`.
pub fn branch_losses(net: &RadialNetwork, state: &PowerFlowState) -> Vec<f64> {
    net.branches()
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let v = net.bus(br.from).v_nom;
            br.r * (state.flow_p[k].powi(2) + state.flow_q[k].powi(2)) / (v * v)
        })
        .collect()
}

pub fn total_losses(net: &RadialNetwork, state: &PowerFlowState) -> f64 {
    branch_losses(net, state).iter().sum()
}

/// Root-to-`leaf` path with voltage magnitudes.
pub fn branch_voltage_profile(
    net: &RadialNetwork,
    state: &PowerFlowState,
    leaf: BusId,
) -> Result<Vec<(BusId, f64)>, FlowError> {
    let path = net.path_from_root(leaf).map_err(|_| FlowError::UnknownBus(leaf))?;
    Ok(path.into_iter().map(|b| (b, state.v_at(b))).collect())
}

/// Largest residual of the LinDistFlow equations for a state and injection set.
pub fn lindistflow_residual(net: &RadialNetwork, inj: &InjectionSet, state: &PowerFlowState) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, br) in net.branches().iter().enumerate() {
        let j = br.to;
        let bus = net.bus(j);
        let mut p = bus.load_p - inj.p(j);
        let mut q = bus.load_q - inj.q(j);
        for &c in net.children(j) {
            let kc = net.incoming_branch(c).unwrap();
            p += state.flow_p[kc];
            q += state.flow_q[kc];
        }
        worst = worst.max((state.flow_p[k] - p).abs());
        worst = worst.max((state.flow_q[k] - q).abs());
        let du = state.u[br.from.index()] - 2.0 * (br.r * state.flow_p[k] + br.x * state.flow_q[k]);
        worst = worst.max((state.u[j.index()] - du).abs());
    }
    let root = net.root();
    worst.max((state.u[root.index()] - net.bus(root).v_nom.powi(2)).abs())
}

/// Per-edge flow table: `from,to,p_pu,q_pu,p_mw,q_mvar,loss_pu,loss_mw`.
pub fn write_flow_csv<W: Write>(w: W, net: &RadialNetwork, state: &PowerFlowState) -> Result<(), FlowError> {
    state.check(net)?;
    let base = net.base_mva();
    let losses = branch_losses(net, state);
    let mut out = crate::csv_writer(w);
    out.write_record(["from", "to", "p_pu", "q_pu", "p_mw", "q_mvar", "loss_pu", "loss_mw"])?;
    for (k, br) in net.branches().iter().enumerate() {
        out.write_record([
            br.from.to_string(),
            br.to.to_string(),
            state.flow_p[k].to_string(),
            state.flow_q[k].to_string(),
            (state.flow_p[k] * base).to_string(),
            (state.flow_q[k] * base).to_string(),
            losses[k].to_string(),
            (losses[k] * base).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-bus voltage table: `bus,v_pu,u_pu,v_kv`.
pub fn write_voltage_csv<W: Write>(w: W, net: &RadialNetwork, state: &PowerFlowState) -> Result<(), FlowError> {
    state.check(net)?;
    let mut out = crate::csv_writer(w);
    out.write_record(["bus", "v_pu", "u_pu", "v_kv"])?;
    for id in net.bus_ids() {
        let v = state.v_at(id);
        out.write_record([id.to_string(), v.to_string(), state.u_at(id).to_string(), (v * net.base_kv()).to_string()])?;
    }
    out.flush()?;
    Ok(())
}
