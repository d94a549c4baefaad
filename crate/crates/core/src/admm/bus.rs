//! In-memory synchronous message bus restricted to feeder neighbors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::netmodel::{BusId, RadialNetwork};

use super::AdmmError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    /// Parent's copy of the flow on the edge to the receiver.
    QPlus(f64),
    /// Child's copy of the flow on its incoming edge.
    QMinus(f64),
    /// Child's copy of the receiver's squared voltage.
    UMinus(f64),
    /// Consensus squared voltage of the sender.
    GlobalU(f64),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::QPlus(_) => "q_plus",
            Payload::QMinus(_) => "q_minus",
            Payload::UMinus(_) => "u_minus",
            Payload::GlobalU(_) => "global_u",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub round: usize,
    pub from: BusId,
    pub to: BusId,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub round: usize,
    pub from: BusId,
    pub to: BusId,
    pub kind: &'static str,
}

/// Per-receiver inboxes; every accepted message is logged.
#[derive(Debug, Clone)]
pub struct MessageBus {
    edges: BTreeSet<(BusId, BusId)>,
    inbox: BTreeMap<BusId, Vec<Message>>,
    log: Vec<LogEntry>,
}

impl MessageBus {
    pub fn new(net: &RadialNetwork) -> Self {
        let mut edges = BTreeSet::new();
        for br in net.branches() {
            edges.insert((br.from, br.to));
            edges.insert((br.to, br.from));
        }
        MessageBus { edges, inbox: BTreeMap::new(), log: Vec::new() }
    }

    pub fn adjacent(&self, a: BusId, b: BusId) -> bool {
        self.edges.contains(&(a, b))
    }

    pub fn post(&mut self, msg: Message) -> Result<(), AdmmError> {
        if !self.adjacent(msg.from, msg.to) {
            return Err(AdmmError::ProtocolViolation { from: msg.from, to: msg.to });
        }
        let queue = self.inbox.entry(msg.to).or_default();
        if queue.iter().any(|m| m.from == msg.from && m.round == msg.round && m.payload.kind() == msg.payload.kind()) {
            return Err(AdmmError::DuplicateMessage { from: msg.from, to: msg.to, round: msg.round });
        }
        self.log.push(LogEntry { round: msg.round, from: msg.from, to: msg.to, kind: msg.payload.kind() });
        queue.push(msg);
        Ok(())
    }

    /// Drains everything addressed to `to`.
    pub fn take(&mut self, to: BusId) -> Vec<Message> {
        self.inbox.remove(&to).unwrap_or_default()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Logged messages between buses that are not neighbors (always empty
    /// unless the log was tampered with).
    pub fn non_neighbor_messages(&self) -> usize {
        self.log.iter().filter(|e| !self.adjacent(e.from, e.to)).count()
    }

    pub fn write_log_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = crate::csv_writer(w);
        out.write_record(["round", "from", "to", "kind"])?;
        for e in &self.log {
            out.write_record([e.round.to_string(), e.from.to_string(), e.to.to_string(), e.kind.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Finds the one message of `kind` from `from` in `msgs`.
pub(crate) fn expect(msgs: &[Message], from: BusId, to: BusId, round: usize, kind: &'static str) -> Result<f64, AdmmError> {
    msgs.iter()
        .find(|m| m.from == from && m.round == round && m.payload.kind() == kind)
        .map(|m| match m.payload {
            Payload::QPlus(v) | Payload::QMinus(v) | Payload::UMinus(v) | Payload::GlobalU(v) => v,
        })
        .ok_or(AdmmError::RoundStall { round, from, to, kind })
}
