//! Oracle structural causal models with exact `do()` sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Provenance};
use crate::graph::{CausalGraph, GraphError, GraphSpec};
use crate::mechanism::{Mechanism, Term};

#[derive(Debug, Error)]
pub enum ScmError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node}: {reason}")]
    BadMechanism { node: String, reason: String },
    #[error("expected {expected} mechanisms, got {got}")]
    MechanismCount { expected: usize, got: usize },
    #[error("intervention value {value} outside [{lo}, {hi}]")]
    ValueOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("node index {0} out of range")]
    InvalidNode(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("could not parse model description: {0}")]
    Parse(String),
    #[error("mechanism table is missing node '{0}'")]
    MissingMechanism(String),
}

/// Closed interval of admissible intervention values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange { lo: -5.0, hi: 5.0 }
    }
}

impl ValueRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn check(&self, v: f64) -> Result<(), ScmError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(ScmError::ValueOutOfRange {
                value: v,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// `do(node = value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub node: usize,
    pub value: f64,
}

impl Intervention {
    pub fn new(node: usize, value: f64) -> Self {
        Intervention { node, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScm {
    graph: CausalGraph,
    mechanisms: Vec<Mechanism>,
}

/// Declarative description: graph plus one mechanism per node name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSpec {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub mechanisms: std::collections::BTreeMap<String, Mechanism>,
}

impl ScmSpec {
    pub fn from_toml(text: &str) -> Result<Self, ScmError> {
        toml::from_str(text).map_err(|e| ScmError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ScmError> {
        toml::to_string(self).map_err(|e| ScmError::Parse(e.to_string()))
    }
}

impl OracleScm {
    pub fn new(graph: CausalGraph, mechanisms: Vec<Mechanism>) -> Result<Self, ScmError> {
        if mechanisms.len() != graph.n_nodes() {
            return Err(ScmError::MechanismCount {
                expected: graph.n_nodes(),
                got: mechanisms.len(),
            });
        }
        for (i, m) in mechanisms.iter().enumerate() {
            m.check(graph.parents(i).len())
                .map_err(|reason| ScmError::BadMechanism {
                    node: graph.name(i).to_string(),
                    reason,
                })?;
        }
        Ok(OracleScm { graph, mechanisms })
    }

    pub fn from_spec(spec: &ScmSpec) -> Result<Self, ScmError> {
        let graph = CausalGraph::try_from(GraphSpec {
            nodes: spec.nodes.clone(),
            edges: spec.edges.clone(),
        })?;
        let mechanisms = spec
            .nodes
            .iter()
            .map(|n| {
                spec.mechanisms
                    .get(n)
                    .cloned()
                    .ok_or_else(|| ScmError::MissingMechanism(n.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        OracleScm::new(graph, mechanisms)
    }

    pub fn to_spec(&self) -> ScmSpec {
        let g: GraphSpec = self.graph.clone().into();
        ScmSpec {
            mechanisms: g
                .nodes
                .iter()
                .cloned()
                .zip(self.mechanisms.iter().cloned())
                .collect(),
            nodes: g.nodes,
            edges: g.edges,
        }
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    pub fn mechanism(&self, node: usize) -> &Mechanism {
        &self.mechanisms[node]
    }

    /// Copy with all additive (non-root) noise removed.
    pub fn zero_noise(&self) -> OracleScm {
        OracleScm {
            graph: self.graph.clone(),
            mechanisms: self.mechanisms.iter().map(Mechanism::without_noise).collect(),
        }
    }

    /// Evaluates a node's mechanism at the values of its parents in `row`.
    pub fn eval_node(&self, node: usize, row: &[f64]) -> f64 {
        let parents: Vec<f64> = self.graph.parents(node).iter().map(|&p| row[p]).collect();
        self.mechanisms[node].eval(&parents)
    }

    /// Draws `n` rows from the observational or interventional distribution.
    ///
    /// Nodes are evaluated in topological order with one standard-normal
    /// draw per node per row; the intervened node's equation is replaced by
    /// the constant and its draw is discarded, so the stream position does not
    /// depend on which node is intervened.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        intervention: Option<Intervention>,
        n: usize,
        range: ValueRange,
        rng: &mut R,
    ) -> Result<Dataset, ScmError> {
        if n == 0 {
            return Err(ScmError::NoSamples);
        }
        if let Some(iv) = intervention {
            if iv.node >= self.graph.n_nodes() {
                return Err(ScmError::InvalidNode(iv.node));
            }
            range.check(iv.value)?;
        }
        let n_nodes = self.graph.n_nodes();
        let mut columns = vec![Vec::with_capacity(n); n_nodes];
        let mut row = vec![0.0; n_nodes];
        let mut parents = Vec::new();
        for _ in 0..n {
            for &node in self.graph.topological_order() {
                let z: f64 = rng.sample(StandardNormal);
                row[node] = match intervention {
                    Some(iv) if iv.node == node => iv.value,
                    _ => {
                        parents.clear();
                        parents.extend(self.graph.parents(node).iter().map(|&p| row[p]));
                        let m = &self.mechanisms[node];
                        m.eval(&parents) + m.noise_std() * z
                    }
                };
            }
            for (c, v) in columns.iter_mut().zip(&row) {
                c.push(*v);
            }
        }
        let (provenance, clamped) = match intervention {
            Some(iv) => (
                Provenance::Intervention {
                    node: iv.node,
                    value: iv.value,
                },
                vec![iv.node],
            ),
            None => (Provenance::Observational, vec![]),
        };
        Ok(Dataset::new(self.graph.names().to_vec(), columns, provenance, clamped)
            .expect("sampler output satisfies dataset invariants"))
    }
}

/// Noise on every non-root node of the benchmark models.
pub const BENCHMARK_NOISE: f64 = 0.01;

/// The 5-node benchmark: roots X1 ~ N(0,1), X4 ~ N(2,1); X2 = 2 X1 + 1;
/// collider X3 = 0.5 X1 - X2 + sin(X2); X5 = 0.2 X4^2.
pub fn build_benchmark_5node() -> OracleScm {
    let graph = CausalGraph::validate(&[(0, 1), (0, 2), (1, 2), (3, 4)], 5).expect("static graph");
    let mechanisms = vec![
        Mechanism::Root { mean: 0.0, std: 1.0 },
        Mechanism::Linear {
            weights: vec![2.0],
            intercept: 1.0,
            noise_std: BENCHMARK_NOISE,
        },
        Mechanism::Analytic {
            terms: vec![
                Term::Weighted { parent: 0, weight: 0.5 },
                Term::Weighted { parent: 1, weight: -1.0 },
                Term::Sine { parent: 1, weight: 1.0 },
            ],
            intercept: 0.0,
            noise_std: BENCHMARK_NOISE,
        },
        Mechanism::Root { mean: 2.0, std: 1.0 },
        Mechanism::Analytic {
            terms: vec![Term::Square { parent: 0, weight: 0.2 }],
            intercept: 0.0,
            noise_std: BENCHMARK_NOISE,
        },
    ];
    OracleScm::new(graph, mechanisms).expect("static mechanisms")
}

pub const BENCHMARK_15_NAMES: [&str; 15] = [
    "R1", "R2", "R3", "R4", "A", "C1", "B", "C2", "D", "C3", "E", "F", "C4", "C5", "C6",
];

/// Collider edges of the 15-node model, by name.
pub const BENCHMARK_15_EDGES: [(&str, &str); 22] = [
    ("R1", "A"),
    ("R2", "A"),
    ("R2", "C1"),
    ("R3", "C1"),
    ("R3", "B"),
    ("R4", "B"),
    ("R1", "C2"),
    ("A", "C2"),
    ("A", "D"),
    ("C1", "D"),
    ("C1", "C3"),
    ("B", "C3"),
    ("B", "E"),
    ("R4", "E"),
    ("C2", "F"),
    ("D", "F"),
    ("D", "C4"),
    ("C3", "C4"),
    ("C3", "C5"),
    ("E", "C5"),
    ("E", "C6"),
    ("C5", "C6"),
];

/// Frozen weights for the 15-node colliders, in node-index order. Forms cycle
/// through affine, `w p1 + sin(p2)` and `w p1 + 0.2 p2^2`; `p1` is the parent
/// with the lower index. Drawn once from U([-2,-0.3] ∪ [0.3,2]).
const CATALOGUE_15: [&[f64]; 11] = [
    &[-1.78, 1.971, -0.331], // A
    &[1.812],                // C1
    &[0.841],                // B
    &[1.347, -0.407, 1.181], // C2
    &[-0.665],               // D
    &[-0.955],               // C3
    &[-1.459, 1.495, -0.996], // E
    &[-1.73],                // F
    &[-1.676],               // C4
    &[1.566, 0.638, -1.589], // C5
    &[1.17],                 // C6
];

/// The collider-dense 15-node model: four N(0,1) roots and eleven
/// two-parent colliders with mixed functional forms.
pub fn build_benchmark_15node() -> OracleScm {
    let names: Vec<String> = BENCHMARK_15_NAMES.iter().map(|s| s.to_string()).collect();
    let idx = |n: &str| names.iter().position(|m| m == n).expect("known node");
    let edges: Vec<(usize, usize)> = BENCHMARK_15_EDGES
        .iter()
        .map(|&(a, b)| (idx(a), idx(b)))
        .collect();
    let graph = CausalGraph::with_names(names.clone(), &edges).expect("static graph");
    let mut mechanisms = Vec::with_capacity(15);
    for node in 0..15 {
        if graph.is_root(node) {
            mechanisms.push(Mechanism::Root { mean: 0.0, std: 1.0 });
            continue;
        }
        let ordinal = node - 4;
        let w = CATALOGUE_15[ordinal];
        let m = match ordinal % 3 {
            0 => Mechanism::Linear {
                weights: vec![w[0], w[1]],
                intercept: w[2],
                noise_std: BENCHMARK_NOISE,
            },
            1 => Mechanism::Analytic {
                terms: vec![
                    Term::Weighted { parent: 0, weight: w[0] },
                    Term::Sine { parent: 1, weight: 1.0 },
                ],
                intercept: 0.0,
                noise_std: BENCHMARK_NOISE,
            },
            _ => Mechanism::Analytic {
                terms: vec![
                    Term::Weighted { parent: 0, weight: w[0] },
                    Term::Square { parent: 1, weight: 0.2 },
                ],
                intercept: 0.0,
                noise_std: BENCHMARK_NOISE,
            },
        };
        mechanisms.push(m);
    }
    OracleScm::new(graph, mechanisms).expect("static mechanisms")
}
