//! Radial feeder data model, topology validation and Matpower-style case ingestion.
//!
//! All electrical quantities held by a [`RadialNetwork`] are per-unit on the
//! network's `base_mva` / `base_kv`. Bus ids are the 1-based numbers used in
//! the case file and must be contiguous.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// External (1-based) bus number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub usize);

impl BusId {
    /// Position of the bus inside per-bus vectors.
    #[inline]
    pub fn index(self) -> usize {
        self.0 - 1
    }

    #[inline]
    pub fn from_index(index: usize) -> Self {
        BusId(index + 1)
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    /// Active load, p.u.
    pub load_p: f64,
    /// Reactive load, p.u.
    pub load_q: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_nom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    pub in_service: bool,
}

/// A single broken invariant found by [`validate_radial`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoBuses,
    NonContiguousIds,
    UnknownRoot(BusId),
    UnknownBus { branch: usize, bus: BusId },
    SelfLoop(usize),
    BranchCountExceeds { branches: usize, buses: usize },
    BranchCountShort { branches: usize, buses: usize },
    DisconnectedBus(BusId),
    MultipleParents(BusId),
    RootHasParent,
    PointsTowardRoot(usize),
    ChildrenMapInconsistent(BusId),
    BadVoltageLimits(BusId),
    NonFiniteLoad(BusId),
    NegativeImpedance(usize),
    OutOfServiceBranch(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoBuses => write!(f, "network has no buses"),
            Violation::NonContiguousIds => write!(f, "bus ids are not unique and contiguous from 1"),
            Violation::UnknownRoot(b) => write!(f, "root bus {b} does not exist"),
            Violation::UnknownBus { branch, bus } => {
                write!(f, "branch {branch} references unknown bus {bus}")
            }
            Violation::SelfLoop(k) => write!(f, "branch {k} is a self loop"),
            Violation::BranchCountExceeds { branches, buses } => write!(
                f,
                "branch count exceeds N-1 ({branches} branches for {buses} buses)"
            ),
            Violation::BranchCountShort { branches, buses } => write!(
                f,
                "branch count below N-1 ({branches} branches for {buses} buses)"
            ),
            Violation::DisconnectedBus(b) => write!(f, "disconnected bus {b}"),
            Violation::MultipleParents(b) => write!(f, "bus {b} has more than one parent"),
            Violation::RootHasParent => write!(f, "root bus has an incoming branch"),
            Violation::PointsTowardRoot(k) => write!(f, "branch {k} points toward the root"),
            Violation::ChildrenMapInconsistent(b) => {
                write!(f, "children map of bus {b} disagrees with branch orientation")
            }
            Violation::BadVoltageLimits(b) => write!(f, "bus {b} violates 0 < v_min <= v_nom <= v_max"),
            Violation::NonFiniteLoad(b) => write!(f, "bus {b} has a non-finite load"),
            Violation::NegativeImpedance(k) => write!(f, "branch {k} has negative r or x"),
            Violation::OutOfServiceBranch(k) => write!(f, "branch {k} is out of service"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid network: {0}")]
    Invalid(ViolationReport),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
}

fn parse_err(line: usize, msg: impl Into<String>) -> NetError {
    NetError::Parse { line, msg: msg.into() }
}

/// Immutable radial feeder rooted at the substation bus.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    root: BusId,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    parent: Vec<Option<BusId>>,
    children: Vec<Vec<BusId>>,
    incoming: Vec<Option<usize>>,
    base_mva: f64,
    base_kv: f64,
}

impl RadialNetwork {
    /// Builds a validated network. Out-of-service branches are dropped and
    /// the remaining ones are reoriented to point away from `root`.
    pub fn new(
        root: BusId,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_mva: f64,
        base_kv: f64,
    ) -> Result<Self, NetError> {
        buses.sort_by_key(|b| b.id);
        let n = buses.len();
        let mut report = ViolationReport::default();
        if n == 0 {
            report.violations.push(Violation::NoBuses);
            return Err(NetError::Invalid(report));
        }
        if buses.iter().enumerate().any(|(k, b)| b.id != BusId::from_index(k)) {
            report.violations.push(Violation::NonContiguousIds);
            return Err(NetError::Invalid(report));
        }
        if root.0 == 0 || root.0 > n {
            report.violations.push(Violation::UnknownRoot(root));
            return Err(NetError::Invalid(report));
        }

        let live: Vec<Branch> = branches.into_iter().filter(|b| b.in_service).collect();
        let mut adjacency: Vec<Vec<(BusId, usize)>> = vec![Vec::new(); n];
        for (k, br) in live.iter().enumerate() {
            for bus in [br.from, br.to] {
                if bus.0 == 0 || bus.0 > n {
                    report.violations.push(Violation::UnknownBus { branch: k, bus });
                }
            }
            if br.from == br.to {
                report.violations.push(Violation::SelfLoop(k));
            }
        }
        if !report.is_ok() {
            return Err(NetError::Invalid(report));
        }
        for (k, br) in live.iter().enumerate() {
            adjacency[br.from.index()].push((br.to, k));
            adjacency[br.to.index()].push((br.from, k));
        }
        for adj in adjacency.iter_mut() {
            adj.sort();
        }

        // Breadth-first orientation from the root.
        let mut oriented = live.clone();
        let mut seen = vec![false; n];
        let mut used = vec![false; live.len()];
        let mut queue = VecDeque::from([root]);
        seen[root.index()] = true;
        while let Some(bus) = queue.pop_front() {
            for &(next, k) in &adjacency[bus.index()] {
                if used[k] || seen[next.index()] {
                    continue;
                }
                used[k] = true;
                seen[next.index()] = true;
                let br = &mut oriented[k];
                if br.from != bus {
                    std::mem::swap(&mut br.from, &mut br.to);
                }
                queue.push_back(next);
            }
        }

        let net = Self::from_parts_unchecked(root, buses, oriented, base_mva, base_kv);
        let report = validate_radial(&net);
        if report.is_ok() {
            Ok(net)
        } else {
            Err(NetError::Invalid(report))
        }
    }

    /// Assembles a network exactly as given, without reorienting or checking
    /// anything. Use [`validate_radial`] on the result.
    pub fn from_parts_unchecked(
        root: BusId,
        mut buses: Vec<Bus>,
        branches: Vec<Branch>,
        base_mva: f64,
        base_kv: f64,
    ) -> Self {
        buses.sort_by_key(|b| b.id);
        let n = buses.len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut incoming = vec![None; n];
        for (k, br) in branches.iter().enumerate() {
            let (f, t) = (br.from.0, br.to.0);
            if f == 0 || f > n || t == 0 || t > n {
                continue;
            }
            if parent[br.to.index()].is_none() {
                parent[br.to.index()] = Some(br.from);
                incoming[br.to.index()] = Some(k);
            }
            children[br.from.index()].push(br.to);
        }
        for c in children.iter_mut() {
            c.sort();
        }
        RadialNetwork {
            root,
            buses,
            branches,
            parent,
            children,
            incoming,
            base_mva,
            base_kv,
        }
    }

    pub fn root(&self) -> BusId {
        self.root
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn contains(&self, id: BusId) -> bool {
        id.0 >= 1 && id.0 <= self.buses.len()
    }

    pub fn bus(&self, id: BusId) -> &Bus {
        &self.buses[id.index()]
    }

    pub fn parent(&self, id: BusId) -> Option<BusId> {
        self.parent[id.index()]
    }

    pub fn children(&self, id: BusId) -> &[BusId] {
        &self.children[id.index()]
    }

    /// Index of the branch feeding `id` (none for the root).
    pub fn incoming_branch(&self, id: BusId) -> Option<usize> {
        self.incoming[id.index()]
    }

    pub fn bus_ids(&self) -> impl Iterator<Item = BusId> + '_ {
        self.buses.iter().map(|b| b.id)
    }

    pub fn is_leaf(&self, id: BusId) -> bool {
        self.children[id.index()].is_empty()
    }

    pub fn leaves(&self) -> Vec<BusId> {
        self.bus_ids().filter(|&b| self.is_leaf(b)).collect()
    }

    /// Buses from the root down to `leaf`, inclusive.
    pub fn path_from_root(&self, leaf: BusId) -> Result<Vec<BusId>, NetError> {
        if !self.contains(leaf) {
            return Err(NetError::UnknownBus(leaf));
        }
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
            if path.len() > self.buses.len() {
                break;
            }
        }
        path.reverse();
        Ok(path)
    }

    /// Copy of the network with one bus's load multiplied by `factor`.
    pub fn with_scaled_load(&self, id: BusId, factor: f64) -> Result<Self, NetError> {
        if !self.contains(id) {
            return Err(NetError::UnknownBus(id));
        }
        let mut net = self.clone();
        let bus = &mut net.buses[id.index()];
        bus.load_p *= factor;
        bus.load_q *= factor;
        Ok(net)
    }

    /// Copy with every load replaced through `f(bus) -> (p, q)`.
    pub fn with_loads(&self, mut f: impl FnMut(&Bus) -> (f64, f64)) -> Self {
        let mut net = self.clone();
        for bus in net.buses.iter_mut() {
            let (p, q) = f(bus);
            bus.load_p = p;
            bus.load_q = q;
        }
        net
    }
}

/// Checks every structural invariant of a radial network and lists the broken ones.
pub fn validate_radial(net: &RadialNetwork) -> ViolationReport {
    let mut out = Vec::new();
    let n = net.buses.len();
    if n == 0 {
        return ViolationReport { violations: vec![Violation::NoBuses] };
    }
    if net.buses.iter().enumerate().any(|(k, b)| b.id != BusId::from_index(k)) {
        out.push(Violation::NonContiguousIds);
        return ViolationReport { violations: out };
    }
    if !net.contains(net.root) {
        out.push(Violation::UnknownRoot(net.root));
        return ViolationReport { violations: out };
    }
    for bus in &net.buses {
        if !(bus.load_p.is_finite() && bus.load_q.is_finite()) {
            out.push(Violation::NonFiniteLoad(bus.id));
        }
        let ok = bus.v_min > 0.0 && bus.v_min <= bus.v_nom && bus.v_nom <= bus.v_max;
        if !ok || !bus.v_max.is_finite() {
            out.push(Violation::BadVoltageLimits(bus.id));
        }
    }
    let mut in_degree = vec![0usize; n];
    let mut valid_edges = Vec::new();
    for (k, br) in net.branches.iter().enumerate() {
        if !br.in_service {
            out.push(Violation::OutOfServiceBranch(k));
        }
        let mut known = true;
        for bus in [br.from, br.to] {
            if !net.contains(bus) {
                out.push(Violation::UnknownBus { branch: k, bus });
                known = false;
            }
        }
        if !known {
            continue;
        }
        if br.from == br.to {
            out.push(Violation::SelfLoop(k));
            continue;
        }
        if !(br.r >= 0.0 && br.x >= 0.0) {
            out.push(Violation::NegativeImpedance(k));
        }
        in_degree[br.to.index()] += 1;
        valid_edges.push(k);
    }
    if net.branches.len() > n - 1 {
        out.push(Violation::BranchCountExceeds { branches: net.branches.len(), buses: n });
    } else if net.branches.len() < n - 1 {
        out.push(Violation::BranchCountShort { branches: net.branches.len(), buses: n });
    }
    if in_degree[net.root.index()] > 0 {
        out.push(Violation::RootHasParent);
    }
    for id in net.bus_ids() {
        if id != net.root && in_degree[id.index()] > 1 {
            out.push(Violation::MultipleParents(id));
        }
    }

    // Connectivity over the undirected edge set.
    let mut adjacency = vec![Vec::new(); n];
    for &k in &valid_edges {
        let br = &net.branches[k];
        adjacency[br.from.index()].push(br.to);
        adjacency[br.to.index()].push(br.from);
    }
    let mut depth = vec![usize::MAX; n];
    depth[net.root.index()] = 0;
    let mut queue = VecDeque::from([net.root]);
    while let Some(b) = queue.pop_front() {
        for &nb in &adjacency[b.index()] {
            if depth[nb.index()] == usize::MAX {
                depth[nb.index()] = depth[b.index()] + 1;
                queue.push_back(nb);
            }
        }
    }
    for id in net.bus_ids() {
        if depth[id.index()] == usize::MAX {
            out.push(Violation::DisconnectedBus(id));
        }
    }
    for &k in &valid_edges {
        let br = &net.branches[k];
        let (df, dt) = (depth[br.from.index()], depth[br.to.index()]);
        if df != usize::MAX && dt != usize::MAX && dt <= df {
            out.push(Violation::PointsTowardRoot(k));
        }
    }

    // Cached adjacency must mirror the branch list.
    let mut expected_children = vec![Vec::new(); n];
    for &k in &valid_edges {
        let br = &net.branches[k];
        expected_children[br.from.index()].push(br.to);
    }
    for (idx, mut exp) in expected_children.into_iter().enumerate() {
        exp.sort();
        let id = BusId::from_index(idx);
        let parent_ok = match net.parent[idx] {
            Some(p) => net.children[p.index()].contains(&id),
            None => id == net.root || in_degree[idx] == 0,
        };
        if exp != net.children[idx] || !parent_ok {
            out.push(Violation::ChildrenMapInconsistent(id));
        }
    }
    ViolationReport { violations: out }
}

/// Parent-before-child ordering (breadth first, ascending ids within a level).
pub fn subtree_order(net: &RadialNetwork) -> Vec<BusId> {
    let mut order = Vec::with_capacity(net.n_buses());
    let mut queue = VecDeque::from([net.root()]);
    while let Some(b) = queue.pop_front() {
        order.push(b);
        queue.extend(net.children(b).iter().copied());
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Bus,
    Branch,
}

const BUS_COLS: usize = 13;
const BRANCH_COLS: usize = 11;

/// Parses the bus, branch and baseMVA blocks of a Matpower `.m` case.
///
/// The generator and cost blocks are skipped. When the file carries the
/// usual conversion statements (`... / (Vbase^2 / Sbase)` for branch
/// impedances, `... / 1e3` for loads), the raw columns are taken to be in
/// ohms and kW respectively.
pub fn parse_case(text: &str) -> Result<RadialNetwork, NetError> {
    let mut base_mva: Option<f64> = None;
    let mut bus_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut branch_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut seen_bus = false;
    let mut seen_branch = false;
    let mut block: Option<BlockKind> = None;
    let mut impedance_in_ohms = false;
    let mut loads_in_kw = false;

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let code = raw.split('%').next().unwrap_or("").trim();

        if let Some(kind) = block {
            let (row_text, closes) = match code.find(']') {
                Some(pos) => (&code[..pos], true),
                None => (code, false),
            };
            for piece in row_text.split(';') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                let values = piece
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| parse_err(line_no, format!("bad numeric field '{t}'")))
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                let need = if kind == BlockKind::Bus { BUS_COLS } else { BRANCH_COLS };
                if values.len() < need {
                    return Err(parse_err(
                        line_no,
                        format!("expected at least {need} columns, found {}", values.len()),
                    ));
                }
                match kind {
                    BlockKind::Bus => bus_rows.push((line_no, values)),
                    BlockKind::Branch => branch_rows.push((line_no, values)),
                }
            }
            if closes {
                block = None;
            }
            continue;
        }

        if code.contains("mpc.branch(:, [BR_R BR_X])") && code.contains("Vbase") {
            impedance_in_ohms = true;
            continue;
        }
        if code.contains("mpc.bus(:, [PD, QD])") && code.contains("1e3") {
            loads_in_kw = true;
            continue;
        }
        if let Some(rest) = code.strip_prefix("mpc.baseMVA") {
            let value = rest.trim().trim_start_matches('=').trim().trim_end_matches(';').trim();
            base_mva = Some(
                value
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad baseMVA '{value}'")))?,
            );
            continue;
        }
        for (name, kind) in [("mpc.bus", BlockKind::Bus), ("mpc.branch", BlockKind::Branch)] {
            let Some(rest) = code.strip_prefix(name) else { continue };
            let rest = rest.trim_start();
            if !rest.starts_with('=') {
                continue;
            }
            let after = rest[1..].trim_start();
            let Some(body) = after.strip_prefix('[') else {
                return Err(parse_err(line_no, format!("expected '[' after {name} =")));
            };
            let seen = if kind == BlockKind::Bus { &mut seen_bus } else { &mut seen_branch };
            if *seen {
                return Err(parse_err(line_no, format!("duplicate {name} block")));
            }
            *seen = true;
            block = Some(kind);
            // Rows may start on the opening line.
            let body = body.trim();
            if !body.is_empty() {
                return Err(parse_err(line_no, "rows on the block opening line are not supported"));
            }
        }
    }
    if block.is_some() {
        return Err(parse_err(text.lines().count(), "unterminated matrix block"));
    }
    if !seen_bus {
        return Err(parse_err(0, "missing mpc.bus block"));
    }
    if !seen_branch {
        return Err(parse_err(0, "missing mpc.branch block"));
    }
    let base_mva = base_mva.ok_or_else(|| parse_err(0, "missing mpc.baseMVA"))?;
    if !(base_mva > 0.0) {
        return Err(parse_err(0, "baseMVA must be positive"));
    }

    let mut root = None;
    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut vbase_kv = None;
    for (line, row) in &bus_rows {
        let id = as_bus_id(row[0], *line)?;
        if vbase_kv.is_none() {
            vbase_kv = Some(row[9]);
        }
        if row[1] == 3.0 {
            if root.is_some() {
                return Err(parse_err(*line, "more than one reference bus"));
            }
            root = Some(id);
        }
        let load_scale = if loads_in_kw { 1e-3 } else { 1.0 } / base_mva;
        let v_nom = if row[7] > 0.0 { row[7] } else { 1.0 };
        let v_max = if row[11] > 0.0 { row[11] } else { 1.1 };
        let v_min = if row[12] > 0.0 { row[12] } else { 0.9 };
        buses.push(Bus {
            id,
            load_p: row[2] * load_scale,
            load_q: row[3] * load_scale,
            v_min,
            v_max,
            v_nom,
        });
    }
    let root = root.ok_or_else(|| parse_err(0, "no reference bus (type 3)"))?;
    let base_kv = vbase_kv.unwrap_or(0.0);
    let z_scale = if impedance_in_ohms {
        if !(base_kv > 0.0) {
            return Err(parse_err(0, "impedances in ohms need a positive baseKV"));
        }
        base_mva / (base_kv * base_kv)
    } else {
        1.0
    };
    let mut branches = Vec::with_capacity(branch_rows.len());
    for (line, row) in &branch_rows {
        branches.push(Branch {
            from: as_bus_id(row[0], *line)?,
            to: as_bus_id(row[1], *line)?,
            r: row[2] * z_scale,
            x: row[3] * z_scale,
            in_service: row[10] != 0.0,
        });
    }
    RadialNetwork::new(root, buses, branches, base_mva, base_kv)
}

fn as_bus_id(v: f64, line: usize) -> Result<BusId, NetError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(BusId(v as usize))
    } else {
        Err(parse_err(line, format!("bad bus number {v}")))
    }
}

/// Canonical line-oriented dump, one record per line.
pub fn dump_network(net: &RadialNetwork) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "network root={} base_mva={} base_kv={}\n",
        net.root, net.base_mva, net.base_kv
    ));
    for b in &net.buses {
        out.push_str(&format!(
            "bus {} p={} q={} vmin={} vmax={} vnom={}\n",
            b.id, b.load_p, b.load_q, b.v_min, b.v_max, b.v_nom
        ));
    }
    for br in &net.branches {
        out.push_str(&format!("branch {} {} r={} x={}\n", br.from, br.to, br.r, br.x));
    }
    out
}

/// Reads the format written by [`dump_network`].
pub fn parse_dump(text: &str) -> Result<RadialNetwork, NetError> {
    let mut header: Option<(BusId, f64, f64)> = None;
    let mut buses = Vec::new();
    let mut branches = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let mut tokens = raw.split_whitespace();
        let Some(kind) = tokens.next() else { continue };
        let mut positional = Vec::new();
        let mut keyed = std::collections::BTreeMap::new();
        for t in tokens {
            match t.split_once('=') {
                Some((key, v)) => {
                    keyed.insert(key, v);
                }
                None => positional.push(t),
            }
        }
        let num = |key: &str| -> Result<f64, NetError> {
            keyed
                .get(key)
                .ok_or_else(|| parse_err(line, format!("missing {key}")))?
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad {key}")))
        };
        let id_at = |i: usize| -> Result<BusId, NetError> {
            let t = positional.get(i).ok_or_else(|| parse_err(line, "missing bus id"))?;
            t.parse::<usize>()
                .map(BusId)
                .map_err(|_| parse_err(line, format!("bad bus id '{t}'")))
        };
        match kind {
            "network" => {
                let root = num("root")?;
                header = Some((as_bus_id(root, line)?, num("base_mva")?, num("base_kv")?));
            }
            "bus" => buses.push(Bus {
                id: id_at(0)?,
                load_p: num("p")?,
                load_q: num("q")?,
                v_min: num("vmin")?,
                v_max: num("vmax")?,
                v_nom: num("vnom")?,
            }),
            "branch" => branches.push(Branch {
                from: id_at(0)?,
                to: id_at(1)?,
                r: num("r")?,
                x: num("x")?,
                in_service: true,
            }),
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
    }
    let (root, base_mva, base_kv) = header.ok_or_else(|| parse_err(0, "missing network header"))?;
    RadialNetwork::new(root, buses, branches, base_mva, base_kv)
}
