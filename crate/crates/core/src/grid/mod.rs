//! Radial feeder model.
//!
//! A feeder is a tree of [`Bus`]es joined by [`Line`]s and rooted at the
//! distribution transformer. Everything here is a pure function of its inputs.

mod flow;
mod reduce;

pub use flow::{
    compute_flows, congestion_signals, detect_overflows, Congestion, FlowDirection, FlowResult,
    RootedTree,
};
pub use reduce::{reduce_keeping, reduce_to_key_nodes};

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque bus identifier as it appears in feeder files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub String);

impl BusId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BusId {
    fn from(s: &str) -> Self {
        BusId(s.to_owned())
    }
}

impl From<String> for BusId {
    fn from(s: String) -> Self {
        BusId(s)
    }
}

impl From<u32> for BusId {
    fn from(n: u32) -> Self {
        BusId(n.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub load_kw: f64,
    /// Label of the generator hosted here, if any.
    pub generator: Option<String>,
}

impl Bus {
    pub fn new(id: impl Into<BusId>, load_kw: f64) -> Self {
        Bus { id: id.into(), load_kw, generator: None }
    }

    pub fn with_generator(mut self, label: impl Into<String>) -> Self {
        self.generator = Some(label.into());
        self
    }
}

/// A feeder segment. `limit_kw` is `f64::INFINITY` when the line is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub resistance_ohm: f64,
    pub reactance_ohm: f64,
    pub limit_kw: f64,
}

impl Line {
    pub fn new(from: impl Into<BusId>, to: impl Into<BusId>) -> Self {
        Line {
            from: from.into(),
            to: to.into(),
            resistance_ohm: 0.0,
            reactance_ohm: 0.0,
            limit_kw: f64::INFINITY,
        }
    }

    pub fn with_limit(mut self, limit_kw: f64) -> Self {
        self.limit_kw = limit_kw;
        self
    }

    pub fn with_impedance(mut self, resistance_ohm: f64, reactance_ohm: f64) -> Self {
        self.resistance_ohm = resistance_ohm;
        self.reactance_ohm = reactance_ohm;
        self
    }

    pub fn is_bounded(&self) -> bool {
        self.limit_kw.is_finite()
    }

    /// True when the line joins `a` and `b` in either orientation.
    pub fn joins(&self, a: &BusId, b: &BusId) -> bool {
        (&self.from == a && &self.to == b) || (&self.from == b && &self.to == a)
    }

    /// `from-to` label used in CLI flags and output files.
    pub fn label(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialNetwork {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub root: BusId,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("cycle detected: line {from}-{to} closes a loop")]
    CycleDetected { from: BusId, to: BusId },
    #[error("network is disconnected: bus {bus} is not reachable from root ({unreachable} unreachable buses)")]
    Disconnected { bus: BusId, unreachable: usize },
    #[error("duplicate line between {from} and {to}")]
    DuplicateLine { from: BusId, to: BusId },
    #[error("line {0}-{0} connects a bus to itself")]
    SelfLoop(BusId),
    #[error("duplicate bus {0}")]
    DuplicateBus(BusId),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("root bus {0} is not part of the network")]
    MissingRoot(BusId),
    #[error("bus {bus}: load must be finite and non-negative, got {value}")]
    InvalidLoad { bus: BusId, value: f64 },
    #[error("line {line}: {reason}")]
    InvalidLine { line: String, reason: String },
    #[error("no line joins {0} and {1}")]
    UnknownLine(BusId, BusId),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

impl RadialNetwork {
    pub fn new(root: impl Into<BusId>, buses: Vec<Bus>, lines: Vec<Line>) -> Self {
        RadialNetwork { buses, lines, root: root.into() }
    }

    pub fn bus_index(&self, id: &BusId) -> Option<usize> {
        self.buses.iter().position(|b| &b.id == id)
    }

    pub fn bus(&self, id: &BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| &b.id == id)
    }

    pub fn line_index(&self, a: &BusId, b: &BusId) -> Option<usize> {
        self.lines.iter().position(|l| l.joins(a, b))
    }

    pub fn total_load_kw(&self) -> f64 {
        self.buses.iter().map(|b| b.load_kw).sum()
    }

    /// Overrides the limit of the line joining `a` and `b`.
    pub fn set_limit(&mut self, a: &BusId, b: &BusId, limit_kw: f64) -> Result<(), GridError> {
        let idx = self
            .line_index(a, b)
            .ok_or_else(|| GridError::UnknownLine(a.clone(), b.clone()))?;
        if !(limit_kw > 0.0) {
            return Err(GridError::InvalidLine {
                line: self.lines[idx].label(),
                reason: format!("limit must be positive, got {limit_kw}"),
            });
        }
        self.lines[idx].limit_kw = limit_kw;
        Ok(())
    }

    /// Replaces bus loads from an association; buses absent from `loads` get 0.
    pub fn with_loads(&self, loads: &HashMap<BusId, f64>) -> RadialNetwork {
        let mut net = self.clone();
        for bus in &mut net.buses {
            bus.load_kw = loads.get(&bus.id).copied().unwrap_or(0.0);
        }
        net
    }
}

/// Checks that `net` is a tree rooted at `net.root`.
pub fn validate_radial(net: &RadialNetwork) -> Result<(), GridError> {
    let mut index: HashMap<&BusId, usize> = HashMap::with_capacity(net.buses.len());
    for (i, bus) in net.buses.iter().enumerate() {
        if index.insert(&bus.id, i).is_some() {
            return Err(GridError::DuplicateBus(bus.id.clone()));
        }
        if !(bus.load_kw.is_finite() && bus.load_kw >= 0.0) {
            return Err(GridError::InvalidLoad { bus: bus.id.clone(), value: bus.load_kw });
        }
    }
    let root = *index
        .get(&net.root)
        .ok_or_else(|| GridError::MissingRoot(net.root.clone()))?;

    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(net.lines.len());
    let mut uf = UnionFind::new(net.buses.len());
    for line in &net.lines {
        let a = *index.get(&line.from).ok_or_else(|| GridError::UnknownBus(line.from.clone()))?;
        let b = *index.get(&line.to).ok_or_else(|| GridError::UnknownBus(line.to.clone()))?;
        if a == b {
            return Err(GridError::SelfLoop(line.from.clone()));
        }
        check_line_values(line)?;
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(GridError::DuplicateLine { from: line.from.clone(), to: line.to.clone() });
        }
        if !uf.union(a, b) {
            return Err(GridError::CycleDetected { from: line.from.clone(), to: line.to.clone() });
        }
    }

    let root_set = uf.find(root);
    let unreachable: Vec<usize> = (0..net.buses.len()).filter(|&i| uf.find(i) != root_set).collect();
    if let Some(&first) = unreachable.first() {
        return Err(GridError::Disconnected {
            bus: net.buses[first].id.clone(),
            unreachable: unreachable.len(),
        });
    }
    Ok(())
}

fn check_line_values(line: &Line) -> Result<(), GridError> {
    let bad = |reason: String| GridError::InvalidLine { line: line.label(), reason };
    if !(line.resistance_ohm >= 0.0 && line.resistance_ohm.is_finite()) {
        return Err(bad(format!("resistance must be >= 0, got {}", line.resistance_ohm)));
    }
    if !(line.reactance_ohm >= 0.0 && line.reactance_ohm.is_finite()) {
        return Err(bad(format!("reactance must be >= 0, got {}", line.reactance_ohm)));
    }
    if !(line.limit_kw > 0.0) {
        return Err(bad(format!("limit must be positive, got {}", line.limit_kw)));
    }
    Ok(())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}
