use std::collections::BTreeSet;

use super::DynamicsError;

/// Undirected, connected information-exchange graph over strategy indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    neighbors: Vec<Vec<usize>>,
    /// (i, j) with i < j, sorted.
    edges: Vec<(usize, usize)>,
}

impl CommGraph {
    /// Builds a graph from an edge list. Repeated edges collapse; self-loops,
    /// out-of-range indices and disconnected graphs are rejected.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, DynamicsError> {
        if n == 0 {
            return Err(DynamicsError::InvalidGraph("graph has no vertices".into()));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(DynamicsError::InvalidGraph(format!(
                    "edge {a}-{b} references a vertex outside 0..{n}"
                )));
            }
            if a == b {
                return Err(DynamicsError::InvalidGraph(format!("self-loop at {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        neighbors.iter_mut().for_each(|v| v.sort_unstable());

        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if let Some(isolated) = seen.iter().position(|s| !s) {
            return Err(DynamicsError::InvalidGraph(format!(
                "graph is not connected: vertex {isolated} is unreachable from 0"
            )));
        }
        Ok(CommGraph { neighbors, edges })
    }

    /// Checks symmetry of a boolean adjacency matrix before building the graph.
    pub fn from_adjacency(adjacency: &[Vec<bool>]) -> Result<Self, DynamicsError> {
        let n = adjacency.len();
        let mut edges = Vec::new();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(DynamicsError::InvalidGraph(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, &linked) in row.iter().enumerate() {
                if linked != adjacency[j][i] {
                    return Err(DynamicsError::InvalidGraph(format!("adjacency is not symmetric at ({i}, {j})")));
                }
                if linked && i <= j {
                    edges.push((i, j));
                }
            }
        }
        CommGraph::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self, DynamicsError> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        CommGraph::new(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self, DynamicsError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        CommGraph::new(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_complete(&self) -> bool {
        let n = self.len();
        self.edges.len() == n * (n - 1) / 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_isolated_vertex() {
        assert!(matches!(CommGraph::new(3, &[(0, 1)]), Err(DynamicsError::InvalidGraph(_))));
    }

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        assert!(CommGraph::new(2, &[(0, 0), (0, 1)]).is_err());
        assert!(CommGraph::new(2, &[(0, 2)]).is_err());
        assert!(CommGraph::new(0, &[]).is_err());
    }

    #[test]
    fn edges_are_normalized() {
        let g = CommGraph::new(3, &[(2, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g, CommGraph::path(3).unwrap());
    }

    #[test]
    fn adjacency_must_be_symmetric() {
        let asym = vec![vec![false, true], vec![false, false]];
        assert!(CommGraph::from_adjacency(&asym).is_err());
        let sym = vec![vec![false, true], vec![true, false]];
        assert!(CommGraph::from_adjacency(&sym).unwrap().is_complete());
    }

    #[test]
    fn single_vertex_is_complete() {
        let g = CommGraph::complete(1).unwrap();
        assert!(g.is_complete());
        assert!(g.neighbors(0).is_empty());
    }
}
