//! One ADMM agent per bus: local copies, duals and the local QP.

use std::collections::BTreeMap;

use crate::netmodel::BusId;
use crate::qpcore::{solve_qp_warm, QpStatus, QuadProgram, RowRef, WarmStart};

use super::bus::{expect, Message, MessageBus, Payload};
use super::AdmmError;

/// Local copies and their multipliers held by the agent at `node`.
///
/// `q_minus`/`u_minus` copy the incoming edge flow and the parent voltage;
/// `q_plus` holds one copy per outgoing edge and `u_plus` the own voltage.
/// The root has no incoming edge, so its `q_minus`, `u_minus` stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmNodeState {
    pub node: BusId,
    pub q_plus: BTreeMap<BusId, f64>,
    pub q_minus: f64,
    pub u_plus: f64,
    pub u_minus: f64,
    pub lam_q_plus: BTreeMap<BusId, f64>,
    pub lam_q_minus: f64,
    pub lam_u_plus: f64,
    pub lam_u_minus: f64,
}

/// The consensus values an agent's copies are paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalView {
    /// Flow on the edge into this bus.
    pub q_in: f64,
    /// Flow on the edge to each child.
    pub q_out: BTreeMap<BusId, f64>,
    pub u_own: f64,
    pub u_parent: f64,
}

/// How the net reactive balance `Σq⁺ − q⁻ + Q_i` is constrained.
#[derive(Debug, Clone, PartialEq)]
pub enum Balance {
    /// No inverter: the balance is zero.
    Passive,
    /// Inverter output limited to `[-cap, cap]`, optionally tied to a droop law
    /// `q = q̂ + K Σ(q⁺ − q̂⁺)`.
    Inverter { cap: f64, droop: Option<(f64, f64, BTreeMap<BusId, f64>)> },
}

/// Static data of an agent's local problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    pub parent: Option<BusId>,
    pub children: Vec<BusId>,
    pub r: f64,
    pub x: f64,
    /// Nominal voltage of the sending end of the incoming edge.
    pub v_from: f64,
    /// Active flow on the incoming edge, frozen for the whole run.
    pub p_in: f64,
    pub load_q: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Pinned squared voltage (root only).
    pub u_fixed: Option<f64>,
    pub balance: Balance,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub state: AdmmNodeState,
    pub view: GlobalView,
    pub data: AgentData,
    warm: Option<WarmStart>,
}

/// Column layout: `u⁺`, then `q⁻, u⁻` for non-root agents, then one `q⁺` per child.
struct Cols {
    has_parent: bool,
    n_children: usize,
}

impl Cols {
    fn dim(&self) -> usize {
        1 + if self.has_parent { 2 } else { 0 } + self.n_children
    }
    const UP: usize = 0;
    fn qm(&self) -> usize {
        1
    }
    fn um(&self) -> usize {
        2
    }
    fn qp(&self, k: usize) -> usize {
        1 + if self.has_parent { 2 } else { 0 } + k
    }
}

impl Agent {
    pub fn new(state: AdmmNodeState, view: GlobalView, data: AgentData) -> Self {
        Agent { state, view, data, warm: None }
    }

    pub fn node(&self) -> BusId {
        self.state.node
    }

    fn cols(&self) -> Cols {
        Cols { has_parent: self.data.parent.is_some(), n_children: self.data.children.len() }
    }

    /// Net reactive output of the inverter implied by the local copies.
    pub fn injection(&self) -> f64 {
        self.state.q_plus.values().sum::<f64>() - self.state.q_minus + self.data.load_q
    }

    /// Same quantity evaluated on the consensus values.
    pub fn injection_from_globals(&self) -> f64 {
        self.view.q_out.values().sum::<f64>() - self.view.q_in + self.data.load_q
    }

    /// Local augmented-Lagrangian program for penalty `rho`.
    pub fn local_program(&self, rho: f64) -> QuadProgram {
        let cols = self.cols();
        let d = &self.data;
        let s = &self.state;
        let mut prog = QuadProgram::new(cols.dim());
        let mut penalize = |j: usize, lam: f64, z: f64| {
            prog.hessian[(j, j)] += rho;
            prog.linear[j] += lam - rho * z;
        };
        penalize(Cols::UP, s.lam_u_plus, self.view.u_own);
        if d.parent.is_some() {
            penalize(cols.qm(), s.lam_q_minus, self.view.q_in);
            penalize(cols.um(), s.lam_u_minus, self.view.u_parent);
        }
        for (k, c) in d.children.iter().enumerate() {
            penalize(cols.qp(k), s.lam_q_plus[c], self.view.q_out[c]);
        }

        if let Some(u) = d.u_fixed {
            prog.add_eq_sparse(&[(Cols::UP, 1.0)], u);
        }
        if d.parent.is_none() {
            return prog;
        }
        prog.hessian[(cols.qm(), cols.qm())] += 2.0 * d.r / (d.v_from * d.v_from);
        prog.add_eq_sparse(&[(Cols::UP, 1.0), (cols.um(), -1.0), (cols.qm(), 2.0 * d.x)], -2.0 * d.r * d.p_in);
        if d.u_fixed.is_none() {
            prog.set_bounds(Cols::UP, d.u_min, d.u_max);
        }
        let mut net: Vec<(usize, f64)> = (0..d.children.len()).map(|k| (cols.qp(k), 1.0)).collect();
        net.push((cols.qm(), -1.0));
        match &d.balance {
            Balance::Passive => {
                prog.add_eq_sparse(&net, -d.load_q);
            }
            Balance::Inverter { cap, droop } => {
                prog.add_ineq_sparse(&net, cap - d.load_q);
                let neg: Vec<(usize, f64)> = net.iter().map(|&(j, v)| (j, -v)).collect();
                prog.add_ineq_sparse(&neg, cap + d.load_q);
                if let Some((q_ref, k, flow_refs)) = droop {
                    // Σq⁺ − q⁻ + Q = q̂ + K(Σq⁺ − Σq̂⁺)
                    let mut row: Vec<(usize, f64)> = (0..d.children.len()).map(|j| (cols.qp(j), 1.0 - k)).collect();
                    row.push((cols.qm(), -1.0));
                    let ref_sum: f64 = d.children.iter().map(|c| flow_refs.get(c).copied().unwrap_or(0.0)).sum();
                    prog.add_eq_sparse(&row, q_ref - k * ref_sum - d.load_q);
                }
            }
        }
        prog
    }

    /// Minimizes the local augmented Lagrangian and stores the new copies.
    pub fn local_minimize(&mut self, rho: f64) -> Result<(), AdmmError> {
        let prog = self.local_program(rho);
        let sol = solve_qp_warm(&prog, self.warm.as_ref())
            .map_err(|e| AdmmError::AgentFault { node: self.node(), status: None, rows: vec![e.to_string()] })?;
        if sol.status != QpStatus::Optimal {
            let rows = sol.violated_rows.iter().map(RowRef::to_string).collect();
            return Err(AdmmError::AgentFault { node: self.node(), status: Some(sol.status), rows });
        }
        let cols = self.cols();
        let x = &sol.x;
        self.state.u_plus = x[Cols::UP];
        if self.data.parent.is_some() {
            self.state.q_minus = x[cols.qm()];
            self.state.u_minus = x[cols.um()];
        }
        for (k, c) in self.data.children.iter().enumerate() {
            self.state.q_plus.insert(*c, x[cols.qp(k)]);
        }
        self.warm = Some(sol.warm_start());
        Ok(())
    }

    /// Round messages carrying this agent's copies to its neighbors.
    pub fn local_messages(&self, round: usize) -> Vec<Message> {
        let me = self.node();
        let mut out = Vec::new();
        if let Some(p) = self.data.parent {
            out.push(Message { round, from: me, to: p, payload: Payload::QMinus(self.state.q_minus) });
            out.push(Message { round, from: me, to: p, payload: Payload::UMinus(self.state.u_minus) });
        }
        for c in &self.data.children {
            out.push(Message { round, from: me, to: *c, payload: Payload::QPlus(self.state.q_plus[c]) });
        }
        out
    }

    /// Averages own copies with the neighbors' copies of the same quantities
    /// and returns the largest change of a consensus value.
    pub fn receive_locals(&mut self, msgs: &[Message], round: usize) -> Result<f64, AdmmError> {
        let me = self.node();
        let mut change: f64 = 0.0;
        if let Some(p) = self.data.parent {
            let theirs = expect(msgs, p, me, round, "q_plus")?;
            let z = 0.5 * (theirs + self.state.q_minus);
            change = change.max((z - self.view.q_in).abs());
            self.view.q_in = z;
        }
        let mut u_sum = self.state.u_plus;
        for c in &self.data.children {
            let theirs = expect(msgs, *c, me, round, "q_minus")?;
            let z = 0.5 * (self.state.q_plus[c] + theirs);
            let old = self.view.q_out.insert(*c, z).unwrap_or(z);
            change = change.max((z - old).abs());
            u_sum += expect(msgs, *c, me, round, "u_minus")?;
        }
        let u = match self.data.u_fixed {
            Some(u) => u,
            None => u_sum / (1 + self.data.children.len()) as f64,
        };
        change = change.max((u - self.view.u_own).abs());
        self.view.u_own = u;
        Ok(change)
    }

    pub fn global_messages(&self, round: usize) -> Vec<Message> {
        self.data
            .children
            .iter()
            .map(|c| Message { round, from: self.node(), to: *c, payload: Payload::GlobalU(self.view.u_own) })
            .collect()
    }

    pub fn receive_globals(&mut self, msgs: &[Message], round: usize) -> Result<f64, AdmmError> {
        match self.data.parent {
            Some(p) => {
                let z = expect(msgs, p, self.node(), round, "global_u")?;
                let change = (z - self.view.u_parent).abs();
                self.view.u_parent = z;
                Ok(change)
            }
            None => Ok(0.0),
        }
    }

    /// Largest `|copy − consensus|` over this agent's pairings.
    pub fn primal_residual(&self) -> f64 {
        let s = &self.state;
        let mut r = (s.u_plus - self.view.u_own).abs();
        if self.data.parent.is_some() {
            r = r.max((s.q_minus - self.view.q_in).abs()).max((s.u_minus - self.view.u_parent).abs());
        }
        for c in &self.data.children {
            r = r.max((s.q_plus[c] - self.view.q_out[c]).abs());
        }
        r
    }

    /// `λ ← λ + ρ(copy − consensus)` for every pairing.
    pub fn dual_update(&mut self, rho: f64) {
        let s = &mut self.state;
        s.lam_u_plus += rho * (s.u_plus - self.view.u_own);
        if self.data.parent.is_some() {
            s.lam_q_minus += rho * (s.q_minus - self.view.q_in);
            s.lam_u_minus += rho * (s.u_minus - self.view.u_parent);
        }
        for c in &self.data.children {
            *s.lam_q_plus.get_mut(c).expect("dual per child") += rho * (s.q_plus[c] - self.view.q_out[c]);
        }
    }
}

/// Posts every agent's messages in bus order, then hands each agent its inbox.
pub(crate) fn deliver(bus: &mut MessageBus, outgoing: Vec<Message>) -> Result<(), AdmmError> {
    for m in outgoing {
        bus.post(m)?;
    }
    Ok(())
}
