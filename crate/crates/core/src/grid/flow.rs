use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{validate_radial, BusId, GridError, RadialNetwork};

/// Relative supply/demand mismatch tolerated before a slack warning is logged.
pub const SLACK_TOL_REL: f64 = 1e-6;

/// Index form of a validated [`RadialNetwork`], oriented away from the root.
///
/// Lines keep the position they have in `RadialNetwork::lines`; buses keep
/// theirs in `RadialNetwork::buses`.
#[derive(Debug, Clone)]
pub struct RootedTree {
    root: usize,
    bus_ids: Vec<BusId>,
    parent: Vec<Option<usize>>,
    /// (parent bus, child bus) per line.
    ends: Vec<(usize, usize)>,
    /// Buses in breadth-first order from the root.
    order: Vec<usize>,
    /// Line to the parent, per bus.
    up_line: Vec<Option<usize>>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    limits: Vec<f64>,
}

impl RootedTree {
    pub fn new(net: &RadialNetwork) -> Result<Self, GridError> {
        validate_radial(net)?;
        let n = net.buses.len();
        let index: HashMap<&BusId, usize> =
            net.buses.iter().enumerate().map(|(i, b)| (&b.id, i)).collect();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (li, line) in net.lines.iter().enumerate() {
            let a = index[&line.from];
            let b = index[&line.to];
            adj[a].push((b, li));
            adj[b].push((a, li));
        }
        let root = index[&net.root];

        let mut parent = vec![None; n];
        let mut up_line = vec![None; n];
        let mut ends = vec![(0, 0); net.lines.len()];
        let mut order = Vec::with_capacity(n);
        let mut tin = vec![0; n];
        let mut tout = vec![0; n];

        // Iterative DFS for the Euler tour; BFS order is rebuilt from it below.
        let mut clock = 0;
        let mut stack = vec![(root, 0usize)];
        let mut visited = vec![false; n];
        visited[root] = true;
        tin[root] = clock;
        clock += 1;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let (v, li) = adj[u][*next];
                *next += 1;
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some(u);
                    up_line[v] = Some(li);
                    ends[li] = (u, v);
                    tin[v] = clock;
                    clock += 1;
                    stack.push((v, 0));
                }
            } else {
                tout[u] = clock;
                stack.pop();
            }
        }

        order.push(root);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, _) in &adj[u] {
                if parent[v] == Some(u) {
                    order.push(v);
                }
            }
        }

        Ok(RootedTree {
            root,
            bus_ids: net.buses.iter().map(|b| b.id.clone()).collect(),
            parent,
            ends,
            order,
            up_line,
            tin,
            tout,
            limits: net.lines.iter().map(|l| l.limit_kw).collect(),
        })
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn line_count(&self) -> usize {
        self.ends.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn bus_id(&self, bus: usize) -> &BusId {
        &self.bus_ids[bus]
    }

    pub fn bus_ids(&self) -> &[BusId] {
        &self.bus_ids
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus]
    }

    /// Line joining `bus` to its parent.
    pub fn up_line(&self, bus: usize) -> Option<usize> {
        self.up_line[bus]
    }

    /// (parent, child) bus indices of a line.
    pub fn ends(&self, line: usize) -> (usize, usize) {
        self.ends[line]
    }

    pub fn limit(&self, line: usize) -> f64 {
        self.limits[line]
    }

    pub fn limits(&self) -> &[f64] {
        &self.limits
    }

    pub fn set_limit(&mut self, line: usize, limit_kw: f64) {
        self.limits[line] = limit_kw;
    }

    /// Buses ordered so every parent precedes its children.
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// True when `bus` lies in the subtree hanging below `line`.
    #[inline]
    pub fn below(&self, line: usize, bus: usize) -> bool {
        let child = self.ends[line].1;
        self.tin[child] <= self.tin[bus] && self.tin[bus] < self.tout[child]
    }

    /// Writes the flow of every line given per-bus net injections
    /// (load − generation). Returns the supply/demand residual absorbed by the root.
    pub fn flows_into(&self, injections: &[f64], subtree: &mut [f64], flows: &mut [f64]) -> f64 {
        debug_assert_eq!(injections.len(), self.bus_count());
        subtree.copy_from_slice(injections);
        for &bus in self.order.iter().rev() {
            if let (Some(p), Some(line)) = (self.parent[bus], self.up_line[bus]) {
                flows[line] = subtree[bus];
                subtree[p] += subtree[bus];
            }
        }
        subtree[self.root]
    }

    pub fn flows(&self, injections: &[f64]) -> Vec<f64> {
        let mut subtree = vec![0.0; self.bus_count()];
        let mut flows = vec![0.0; self.line_count()];
        self.flows_into(injections, &mut subtree, &mut flows);
        flows
    }

    /// Lines whose |flow| strictly exceeds their limit.
    pub fn overflows<'a>(&'a self, flows: &'a [f64]) -> impl Iterator<Item = Congestion> + 'a {
        flows.iter().enumerate().filter_map(move |(line, &flow)| {
            let overflow = flow.abs() - self.limits[line];
            (overflow > 0.0).then_some(Congestion {
                line,
                overflow_kw: overflow,
                direction: if flow > 0.0 {
                    FlowDirection::ParentToChild
                } else {
                    FlowDirection::ChildToParent
                },
            })
        })
    }

    /// Penalty (negative) or incentive (positive) one congestion sends to `bus`.
    #[inline]
    pub fn signal(&self, congestion: &Congestion, bus: usize, gain: f64) -> f64 {
        let magnitude = congestion.overflow_kw * gain;
        let receiving = match congestion.direction {
            FlowDirection::ParentToChild => self.below(congestion.line, bus),
            FlowDirection::ChildToParent => !self.below(congestion.line, bus),
        };
        if receiving {
            magnitude
        } else {
            -magnitude
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowDirection {
    ParentToChild,
    ChildToParent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Congestion {
    /// Index into `RadialNetwork::lines`.
    pub line: usize,
    pub overflow_kw: f64,
    pub direction: FlowDirection,
}

/// Signed line flows, positive from parent to child in the rooted tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub flow_kw: Vec<f64>,
    /// (parent, child) per line, in network line order.
    pub oriented: Vec<(BusId, BusId)>,
}

impl FlowResult {
    /// Flow from `a` towards `b`, if a line joins them.
    pub fn between(&self, a: &BusId, b: &BusId) -> Option<f64> {
        self.oriented.iter().zip(&self.flow_kw).find_map(|((p, c), &f)| {
            if p == a && c == b {
                Some(f)
            } else if p == b && c == a {
                Some(-f)
            } else {
                None
            }
        })
    }
}

/// Lossless tree flow for per-bus injections (load − generation, kW).
///
/// Buses missing from `injections` inject nothing. A nonzero total is absorbed
/// at the root.
pub fn compute_flows(
    net: &RadialNetwork,
    injections: &HashMap<BusId, f64>,
) -> Result<FlowResult, GridError> {
    let tree = RootedTree::new(net)?;
    let mut inj = vec![0.0; tree.bus_count()];
    for (id, &value) in injections {
        let i = net.bus_index(id).ok_or_else(|| GridError::UnknownBus(id.clone()))?;
        inj[i] = value;
    }
    let mut subtree = vec![0.0; tree.bus_count()];
    let mut flows = vec![0.0; tree.line_count()];
    let residual = tree.flows_into(&inj, &mut subtree, &mut flows);
    let slack_tol = SLACK_TOL_REL * net.total_load_kw().max(1.0);
    if residual.abs() > slack_tol {
        warn!("injections do not balance: {residual:.6} kW assigned to root {}", net.root);
    }
    let oriented = (0..tree.line_count())
        .map(|l| {
            let (p, c) = tree.ends(l);
            (tree.bus_id(p).clone(), tree.bus_id(c).clone())
        })
        .collect();
    Ok(FlowResult { flow_kw: flows, oriented })
}

pub fn detect_overflows(net: &RadialNetwork, flows: &FlowResult) -> Vec<Congestion> {
    flows
        .flow_kw
        .iter()
        .enumerate()
        .filter_map(|(line, &flow)| {
            let overflow = flow.abs() - net.lines[line].limit_kw;
            (overflow > 0.0).then_some(Congestion {
                line,
                overflow_kw: overflow,
                direction: if flow > 0.0 {
                    FlowDirection::ParentToChild
                } else {
                    FlowDirection::ChildToParent
                },
            })
        })
        .collect()
}

/// Per-bus penalty/incentive from a set of congested lines.
///
/// Cutting a congested line splits the tree in two; buses on the side the
/// overflow leaves get `-overflow * gain`, buses on the side it enters get
/// `+overflow * gain`. Contributions from several lines add up.
pub fn congestion_signals(
    net: &RadialNetwork,
    congestions: &[Congestion],
    gain: f64,
) -> Result<HashMap<BusId, f64>, GridError> {
    let tree = RootedTree::new(net)?;
    Ok((0..tree.bus_count())
        .map(|bus| {
            let delta = congestions.iter().map(|c| tree.signal(c, bus, gain)).sum();
            (tree.bus_id(bus).clone(), delta)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::test_util::chain;
    use super::super::{Bus, Line};
    use super::*;

    fn inj(pairs: &[(u32, f64)]) -> HashMap<BusId, f64> {
        pairs.iter().map(|&(b, v)| (BusId::from(b), v)).collect()
    }

    fn star() -> RadialNetwork {
        RadialNetwork::new(
            1u32,
            vec![Bus::new(1u32, 0.0), Bus::new(2u32, 0.0), Bus::new(3u32, 0.0)],
            vec![Line::new(1u32, 2u32), Line::new(1u32, 3u32)],
        )
    }

    #[test]
    fn single_path_carries_the_injection() {
        let f = compute_flows(&chain(3), &inj(&[(3, 5.0), (1, -5.0)])).unwrap();
        assert_eq!(f.between(&"2".into(), &"3".into()), Some(5.0));
        assert_eq!(f.between(&"1".into(), &"2".into()), Some(5.0));
        assert_eq!(f.between(&"3".into(), &"2".into()), Some(-5.0));
    }

    #[test]
    fn zero_injections_give_zero_flows() {
        let f = compute_flows(&chain(5), &HashMap::new()).unwrap();
        assert!(f.flow_kw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn star_conserves_at_root() {
        let f = compute_flows(&star(), &inj(&[(2, 3.0), (3, -3.0)])).unwrap();
        assert_eq!(f.between(&"1".into(), &"2".into()), Some(3.0));
        assert_eq!(f.between(&"1".into(), &"3".into()), Some(-3.0));
    }

    #[test]
    fn orientation_follows_root_not_file_order() {
        let mut net = chain(3);
        net.lines[1] = Line::new(3u32, 2u32);
        let f = compute_flows(&net, &inj(&[(3, 5.0), (1, -5.0)])).unwrap();
        assert_eq!(f.flow_kw[1], 5.0);
        assert_eq!(f.oriented[1], ("2".into(), "3".into()));
    }

    #[test]
    fn unknown_injection_bus_is_an_error() {
        assert!(matches!(
            compute_flows(&chain(2), &inj(&[(7, 1.0)])),
            Err(GridError::UnknownBus(_))
        ));
    }

    #[test]
    fn overflow_boundaries() {
        let mut net = chain(3);
        net.lines[0].limit_kw = 28.0;
        net.lines[1].limit_kw = 28.0;
        let f = FlowResult { flow_kw: vec![33.0, 28.0], oriented: vec![] };
        let c = detect_overflows(&net, &f);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].line, 0);
        assert!((c[0].overflow_kw - 5.0).abs() < 1e-12);

        let unbounded = chain(3);
        let f = FlowResult { flow_kw: vec![1e9, -1e9], oriented: vec![] };
        assert!(detect_overflows(&unbounded, &f).is_empty());
    }

    #[test]
    fn signals_split_by_side() {
        // 1—2—3—4, line 2-3 carries 33 kW towards 3 with a 28 kW limit.
        let mut net = chain(4);
        net.lines[1].limit_kw = 28.0;
        let f = compute_flows(&net, &inj(&[(3, 20.0), (4, 13.0), (1, -33.0)])).unwrap();
        let c = detect_overflows(&net, &f);
        let s = congestion_signals(&net, &c, 1000.0).unwrap();
        assert_eq!(s[&"1".into()], -5000.0);
        assert_eq!(s[&"2".into()], -5000.0);
        assert_eq!(s[&"3".into()], 5000.0);
        assert_eq!(s[&"4".into()], 5000.0);

        let none = congestion_signals(&net, &[], 1000.0).unwrap();
        assert!(none.values().all(|&d| d == 0.0));
    }

    #[test]
    fn signals_accumulate_over_lines() {
        // Two limited lines in series, both overflowing by 2 kW towards bus 4.
        let mut net = chain(4);
        net.lines[1].limit_kw = 10.0;
        net.lines[2].limit_kw = 10.0;
        let f = compute_flows(&net, &inj(&[(4, 12.0), (1, -12.0)])).unwrap();
        let c = detect_overflows(&net, &f);
        assert_eq!(c.len(), 2);
        let s = congestion_signals(&net, &c, 1000.0).unwrap();

        // Independent per-line signals, summed by hand.
        let per_line: Vec<HashMap<BusId, f64>> = c
            .iter()
            .map(|one| congestion_signals(&net, std::slice::from_ref(one), 1000.0).unwrap())
            .collect();
        for bus in &net.buses {
            let expected: f64 = per_line.iter().map(|m| m[&bus.id]).sum();
            assert_eq!(s[&bus.id], expected);
        }
        // Buses 1 and 2 send through both lines.
        assert!((s[&"1".into()] + 4000.0).abs() < 1e-9);
        assert!((s[&"4".into()] - 4000.0).abs() < 1e-9);
        assert!(s[&"3".into()].abs() < 1e-9);
    }
}
