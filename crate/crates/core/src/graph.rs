//! Directed acyclic causal graphs with cached topological order.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    InvalidIndex(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("expected {expected} node names, got {got}")]
    NameCount { expected: usize, got: usize },
    #[error("duplicate node name '{0}'")]
    DuplicateName(String),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
}

/// A validated DAG. Parent and child lists are sorted by node index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct CausalGraph {
    names: Vec<String>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    roots: Vec<usize>,
}

/// Serialized form: node names plus edges by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl TryFrom<GraphSpec> for CausalGraph {
    type Error = GraphError;

    fn try_from(spec: GraphSpec) -> Result<Self, GraphError> {
        let index = |name: &str| {
            spec.nodes
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| GraphError::UnknownNode(name.to_string()))
        };
        let mut edges = Vec::with_capacity(spec.edges.len());
        for (from, to) in &spec.edges {
            edges.push((index(from)?, index(to)?));
        }
        CausalGraph::with_names(spec.nodes.clone(), &edges)
    }
}

impl From<CausalGraph> for GraphSpec {
    fn from(g: CausalGraph) -> Self {
        GraphSpec {
            edges: g
                .edges
                .iter()
                .map(|&(a, b)| (g.names[a].clone(), g.names[b].clone()))
                .collect(),
            nodes: g.names,
        }
    }
}

impl CausalGraph {
    /// Validates `edges` over `n_nodes` nodes named `X1..Xn`.
    pub fn validate(edges: &[(usize, usize)], n_nodes: usize) -> Result<Self, GraphError> {
        let names = (1..=n_nodes).map(|i| format!("X{i}")).collect();
        Self::with_names(names, edges)
    }

    pub fn with_names(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = names.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen_names = BTreeSet::new();
        for name in &names {
            if !seen_names.insert(name.as_str()) {
                return Err(GraphError::DuplicateName(name.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::InvalidIndex(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !seen.insert((a, b)) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            parents[b].push(a);
            children[a].push(b);
        }
        parents.iter_mut().for_each(|p| p.sort_unstable());
        children.iter_mut().for_each(|c| c.sort_unstable());

        // Kahn's algorithm, always releasing the lowest ready index first.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for &c in &children[next] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(GraphError::CycleDetected);
        }
        let roots = (0..n).filter(|&i| parents[i].is_empty()).collect();
        Ok(CausalGraph {
            names,
            edges: edges.to_vec(),
            parents,
            children,
            order,
            roots,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.parents[node].is_empty()
    }

    /// Nodes with at least two parents.
    pub fn colliders(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.parents[i].len() >= 2)
            .collect()
    }

    /// Transitive closure of `children`, excluding `node` itself.
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.children[node].iter().copied().collect();
        while let Some(c) = queue.pop_front() {
            if out.insert(c) {
                queue.extend(self.children[c].iter().copied());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> CausalGraph {
        CausalGraph::validate(&[(0, 1), (0, 2), (1, 2), (3, 4)], 5).unwrap()
    }

    #[test]
    fn chain_order() {
        let g = CausalGraph::validate(&[(0, 1)], 2).unwrap();
        assert_eq!(g.topological_order(), &[0, 1]);
    }

    #[test]
    fn two_cycle_rejected() {
        assert_eq!(
            CausalGraph::validate(&[(0, 1), (1, 0)], 2),
            Err(GraphError::CycleDetected)
        );
    }

    #[test]
    fn bad_edges_rejected() {
        assert_eq!(
            CausalGraph::validate(&[(0, 2)], 2),
            Err(GraphError::InvalidIndex(0, 2, 2))
        );
        assert_eq!(
            CausalGraph::validate(&[(1, 1)], 2),
            Err(GraphError::SelfLoop(1))
        );
        assert_eq!(
            CausalGraph::validate(&[(0, 1), (0, 1)], 2),
            Err(GraphError::DuplicateEdge(0, 1))
        );
        assert_eq!(CausalGraph::validate(&[], 0), Err(GraphError::Empty));
    }

    #[test]
    fn benchmark_structure() {
        let g = fig3();
        assert_eq!(g.roots(), &[0, 3]);
        assert_eq!(g.colliders(), vec![2]);
        assert_eq!(g.parents(2), &[0, 1]);
        assert_eq!(g.descendants(0), BTreeSet::from([1, 2]));
        assert!(g.descendants(4).is_empty());
    }

    #[test]
    fn spec_round_trip() {
        let g = fig3();
        let json = serde_json::to_string(&g).unwrap();
        let back: CausalGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
    }
}
