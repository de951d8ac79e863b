use std::collections::HashSet;

use super::{BusId, GridError, Line, RadialNetwork, RootedTree};

/// Collapses series chains so only key nodes remain.
///
/// Key nodes are the root, generator buses, buses with load, and buses
/// joining three or more lines. A chain of lines between two key nodes
/// becomes one line whose impedance is the chain sum and whose limit is
/// the chain minimum. Stubs that lead to no key node carry no flow and are
/// dropped.
pub fn reduce_to_key_nodes(net: &RadialNetwork) -> Result<RadialNetwork, GridError> {
    reduce_keeping(net, &HashSet::new())
}

/// [`reduce_to_key_nodes`] with extra buses forced to stay.
pub fn reduce_keeping(
    net: &RadialNetwork,
    keep: &HashSet<BusId>,
) -> Result<RadialNetwork, GridError> {
    let tree = RootedTree::new(net)
        .map_err(|e| GridError::InvalidNetwork(format!("cannot reduce: {e}")))?;
    let n = tree.bus_count();

    let protected: Vec<bool> = net
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            i == tree.root() || b.generator.is_some() || b.load_kw > 0.0 || keep.contains(&b.id)
        })
        .collect();

    // A bus survives when its subtree holds something worth keeping.
    let mut retained = protected.clone();
    for &bus in tree.topological_order().iter().rev() {
        if retained[bus] {
            if let Some(p) = tree.parent(bus) {
                retained[p] = true;
            }
        }
    }

    let mut degree = vec![0usize; n];
    for bus in 0..n {
        if let (true, Some(p)) = (retained[bus], tree.parent(bus)) {
            degree[bus] += 1;
            degree[p] += 1;
        }
    }
    let key: Vec<bool> = (0..n).map(|i| retained[i] && (protected[i] || degree[i] >= 3)).collect();

    let mut merged: Vec<(usize, Line)> = Vec::new();
    for bus in 0..n {
        if !key[bus] || bus == tree.root() {
            continue;
        }
        let first = tree.up_line(bus).expect("non-root bus has a parent line");
        let mut line = net.lines[first].clone();
        let mut top = tree.parent(bus).expect("non-root bus has a parent");
        let mut chained = false;
        while !key[top] {
            let up = tree.up_line(top).expect("non-key bus below root");
            let l = &net.lines[up];
            line.resistance_ohm += l.resistance_ohm;
            line.reactance_ohm += l.reactance_ohm;
            line.limit_kw = line.limit_kw.min(l.limit_kw);
            top = tree.parent(top).expect("non-key bus below root");
            chained = true;
        }
        if chained {
            line.from = tree.bus_id(top).clone();
            line.to = tree.bus_id(bus).clone();
        }
        merged.push((first, line));
    }
    merged.sort_by_key(|(idx, _)| *idx);

    let reduced = RadialNetwork {
        buses: net
            .buses
            .iter()
            .enumerate()
            .filter(|(i, _)| key[*i])
            .map(|(_, b)| b.clone())
            .collect(),
        lines: merged.into_iter().map(|(_, l)| l).collect(),
        root: net.root.clone(),
    };
    debug_assert!(super::validate_radial(&reduced).is_ok());
    Ok(reduced)
}
