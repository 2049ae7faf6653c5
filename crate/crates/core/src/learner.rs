//! The mechanism learner: one small MLP per non-root node, a Gaussian model
//! per root, and a per-node loss ledger.
//!
//! Rows whose value for a node was set by an intervention carry no signal
//! about that node's mechanism, so they never enter its training batch or its
//! validation loss. For roots this is what keeps the natural distribution
//! estimate clean.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Tensor, TensorMap};
use crate::dataset::{Dataset, Provenance};
use crate::graph::CausalGraph;
use crate::nn::{self, Adam};

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("node {0} is a root and has no predictor")]
    RootHasNoPredictor(usize),
    #[error("no eligible rows in batch for node {0}")]
    EmptyBatch(usize),
    #[error("node {0} out of range")]
    InvalidNode(usize),
    #[error("node {node} expects {expected} parent values, got {got}")]
    WrongArity {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("MC dropout needs at least 2 passes")]
    TooFewPasses,
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub lr: f64,
    pub hidden: usize,
    /// Dropout probability used only by stochastic forward passes.
    pub dropout: f64,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    /// Minibatches are drawn from this many most recent buffer rows.
    pub window: usize,
    /// Rows collected per executed intervention.
    pub n_exec: usize,
    /// Dedicated Gaussian models for roots; when off, roots are zero-input
    /// predictors trained on every row.
    pub root_learner: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            lr: 2e-3,
            hidden: 64,
            dropout: 0.1,
            steps_per_episode: 20,
            batch_size: 32,
            window: 2048,
            n_exec: 32,
            root_learner: true,
        }
    }
}

/// Row-major rows tagged with the columns that were externally set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowSet {
    n_cols: usize,
    values: Vec<f64>,
    clamp_id: Vec<u32>,
    clamp_sets: Vec<Vec<usize>>,
}

/// Held-out rows used for the ledger.
pub type ValidationSet = RowSet;

impl RowSet {
    pub fn new(n_cols: usize) -> Self {
        RowSet {
            n_cols,
            ..RowSet::default()
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut rs = RowSet::new(ds.n_cols());
        rs.push_dataset(ds);
        rs
    }

    pub fn push_dataset(&mut self, ds: &Dataset) {
        assert_eq!(ds.n_cols(), self.n_cols, "dataset width mismatch");
        let id = self.clamp_set_id(ds.clamped());
        for r in 0..ds.n_rows() {
            self.values.extend(ds.columns().iter().map(|c| c[r]));
            self.clamp_id.push(id);
        }
    }

    pub fn push_row(&mut self, row: &[f64], clamped: &[usize]) {
        assert_eq!(row.len(), self.n_cols, "row width mismatch");
        let id = self.clamp_set_id(clamped);
        self.values.extend_from_slice(row);
        self.clamp_id.push(id);
    }

    fn clamp_set_id(&mut self, clamped: &[usize]) -> u32 {
        if let Some(pos) = self.clamp_sets.iter().rposition(|s| s == clamped) {
            return pos as u32;
        }
        self.clamp_sets.push(clamped.to_vec());
        (self.clamp_sets.len() - 1) as u32
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.clamp_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clamp_id.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn clamped(&self, r: usize) -> &[usize] {
        &self.clamp_sets[self.clamp_id[r] as usize]
    }

    pub fn is_clamped(&self, r: usize, col: usize) -> bool {
        self.clamped(r).contains(&col)
    }

    /// Copy without the rows clamped on `col`.
    pub fn without_clamped(&self, col: usize) -> RowSet {
        let mut out = RowSet::new(self.n_cols);
        for r in 0..self.len() {
            if !self.is_clamped(r, col) {
                out.push_row(self.row(r), self.clamped(r));
            }
        }
        out
    }
}

/// Two dense layers with a rectifier between: `n_in -> hidden -> 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePredictor {
    n_in: usize,
    hidden: usize,
    dropout: f64,
    params: Vec<f64>,
    adam: Adam,
}

impl NodePredictor {
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: usize, dropout: f64, lr: f64, rng: &mut R) -> Self {
        let n = hidden * n_in + 2 * hidden + 1;
        let mut params = vec![0.0; n];
        let (w1, b1, w2, _) = Self::layout(n_in, hidden);
        nn::init_uniform(&mut params[w1..b1], n_in, rng);
        nn::init_uniform(&mut params[b1..w2], n_in, rng);
        nn::init_uniform(&mut params[w2..n], hidden, rng);
        NodePredictor {
            n_in,
            hidden,
            dropout,
            params,
            adam: Adam::new(n, lr),
        }
    }

    fn layout(n_in: usize, hidden: usize) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = hidden * n_in;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        (w1, b1, w2, b2)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    /// `(inputs, hidden units)` of the first layer.
    pub fn hidden_shape(&self) -> (usize, usize) {
        (self.n_in, self.hidden)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.dropout = p;
    }

    fn hidden_into(&self, x: &[f64], h: &mut [f64]) {
        let (w1, b1, w2, _) = Self::layout(self.n_in, self.hidden);
        nn::dense_forward(&self.params[w1..b1], &self.params[b1..w2], x, h);
        nn::relu_in_place(h);
    }

    fn output(&self, h: &[f64]) -> f64 {
        let (_, _, w2, b2) = Self::layout(self.n_in, self.hidden);
        self.params[b2] + self.params[w2..b2].iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.hidden_into(x, &mut h);
        self.output(&h)
    }

    /// Forward pass with inverted dropout on the hidden activations.
    pub fn predict_stochastic<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.hidden_into(x, &mut h);
        if self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            for v in &mut h {
                if rng.random::<f64>() < self.dropout {
                    *v = 0.0;
                } else {
                    *v /= keep;
                }
            }
        }
        self.output(&h)
    }

    /// Mean squared error over `(inputs, target)` pairs and its gradient.
    /// `inputs` is row-major with `n_in` values per sample.
    pub fn mse_and_grad(&self, inputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
        let m = targets.len();
        let (w1, b1, w2, b2) = Self::layout(self.n_in, self.hidden);
        let mut grad = vec![0.0; self.params.len()];
        let mut h = vec![0.0; self.hidden];
        let mut g_h = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for s in 0..m {
            let x = &inputs[s * self.n_in..(s + 1) * self.n_in];
            self.hidden_into(x, &mut h);
            let err = self.output(&h) - targets[s];
            loss += err * err;
            let e = 2.0 * err / m as f64;
            grad[b2] += e;
            for j in 0..self.hidden {
                grad[w2 + j] += e * h[j];
                g_h[j] = if h[j] > 0.0 { e * self.params[w2 + j] } else { 0.0 };
            }
            let (gw1, rest) = grad[w1..w2].split_at_mut(b1 - w1);
            nn::dense_backward(&self.params[w1..b1], x, &g_h, gw1, &mut rest[..self.hidden], None);
        }
        (loss / m as f64, grad)
    }

    /// One Adam step along `grad`.
    pub fn apply_grad(&mut self, grad: &[f64]) {
        self.adam.step(&mut self.params, grad);
    }
}

/// Gaussian root with learnable mean and log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct RootModel {
    /// `[mean, log_std]`
    params: Vec<f64>,
    adam: Adam,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl RootModel {
    pub fn new(lr: f64) -> Self {
        RootModel {
            params: vec![0.0, 0.0],
            adam: Adam::new(2, lr),
        }
    }

    pub fn mean(&self) -> f64 {
        self.params[0]
    }

    pub fn std(&self) -> f64 {
        self.params[1].exp()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mean negative log-likelihood and its gradient w.r.t. `[mean, log_std]`.
    pub fn nll_and_grad(&self, values: &[f64]) -> (f64, [f64; 2]) {
        let (mu, log_s) = (self.params[0], self.params[1]);
        let s = log_s.exp();
        let m = values.len() as f64;
        let (mut nll, mut g_mu, mut g_ls) = (0.0, 0.0, 0.0);
        for &x in values {
            let z = (x - mu) / s;
            nll += 0.5 * z * z + log_s + HALF_LN_2PI;
            g_mu += -z / s;
            g_ls += 1.0 - z * z;
        }
        (nll / m, [g_mu / m, g_ls / m])
    }

    fn apply(&mut self, grad: &[f64]) {
        self.adam.step(&mut self.params, grad);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeModel {
    Predictor(NodePredictor),
    Root(RootModel),
}

#[derive(Debug, Clone)]
pub struct Learner {
    graph: Arc<CausalGraph>,
    cfg: LearnerConfig,
    models: Vec<NodeModel>,
    ledger: Vec<f64>,
    buffer: Arc<RowSet>,
}

impl Learner {
    /// Fresh learner. Predictor weights are U(+-1/sqrt(fan_in)); roots start
    /// at N(0, 1); the ledger holds `+inf` until the first evaluation.
    pub fn new<R: Rng + ?Sized>(graph: Arc<CausalGraph>, cfg: LearnerConfig, rng: &mut R) -> Self {
        let models = (0..graph.n_nodes())
            .map(|i| {
                if graph.is_root(i) && cfg.root_learner {
                    NodeModel::Root(RootModel::new(cfg.lr))
                } else {
                    NodeModel::Predictor(NodePredictor::new(
                        graph.parents(i).len(),
                        cfg.hidden,
                        cfg.dropout,
                        cfg.lr,
                        rng,
                    ))
                }
            })
            .collect();
        let n = graph.n_nodes();
        Learner {
            buffer: Arc::new(RowSet::new(n)),
            graph,
            cfg,
            models,
            ledger: vec![f64::INFINITY; n],
        }
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn models(&self) -> &[NodeModel] {
        &self.models
    }

    pub fn model(&self, node: usize) -> &NodeModel {
        &self.models[node]
    }

    pub fn model_mut(&mut self, node: usize) -> &mut NodeModel {
        &mut self.models[node]
    }

    pub fn ledger(&self) -> &[f64] {
        &self.ledger
    }

    pub fn ledger_initialized(&self) -> bool {
        self.ledger.iter().all(|l| l.is_finite())
    }

    pub fn total_loss(&self) -> f64 {
        self.ledger.iter().sum()
    }

    pub fn buffer(&self) -> &RowSet {
        &self.buffer
    }

    /// Whether `node` learns from rows clamped on it (only zero-input root
    /// predictors in the no-root-learner ablation do).
    fn uses_clamped_rows(&self, node: usize) -> bool {
        self.graph.is_root(node) && !self.cfg.root_learner
    }

    fn eligible(&self, node: usize, rows: &RowSet, r: usize) -> bool {
        self.uses_clamped_rows(node) || !rows.is_clamped(r, node)
    }

    fn check_node(&self, node: usize) -> Result<(), LearnerError> {
        if node >= self.graph.n_nodes() {
            Err(LearnerError::InvalidNode(node))
        } else {
            Ok(())
        }
    }

    fn predictor(&self, node: usize, parents: &[f64]) -> Result<&NodePredictor, LearnerError> {
        self.check_node(node)?;
        match &self.models[node] {
            NodeModel::Root(_) => Err(LearnerError::RootHasNoPredictor(node)),
            NodeModel::Predictor(p) => {
                if p.n_in() != parents.len() {
                    Err(LearnerError::WrongArity {
                        node,
                        expected: p.n_in(),
                        got: parents.len(),
                    })
                } else {
                    Ok(p)
                }
            }
        }
    }

    pub fn predict<R: Rng + ?Sized>(
        &self,
        node: usize,
        parents: &[f64],
        stochastic: bool,
        rng: &mut R,
    ) -> Result<f64, LearnerError> {
        let p = self.predictor(node, parents)?;
        Ok(if stochastic {
            p.predict_stochastic(parents, rng)
        } else {
            p.predict(parents)
        })
    }

    /// Sample variance of `passes` stochastic forward passes.
    pub fn mc_dropout_variance<R: Rng + ?Sized>(
        &self,
        node: usize,
        parents: &[f64],
        passes: usize,
        rng: &mut R,
    ) -> Result<f64, LearnerError> {
        if passes < 2 {
            return Err(LearnerError::TooFewPasses);
        }
        let p = self.predictor(node, parents)?;
        let draws: Vec<f64> = (0..passes).map(|_| p.predict_stochastic(parents, rng)).collect();
        // Shifting by the first draw makes identical draws give exactly 0.
        let shifted: Vec<f64> = draws.iter().map(|d| d - draws[0]).collect();
        let mean = shifted.iter().sum::<f64>() / passes as f64;
        let var = shifted.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (passes - 1) as f64;
        Ok(var)
    }

    /// One optimizer step for `node` on every eligible row of `rows[idx]`.
    /// Returns the pre-update batch loss, or `None` if no row was eligible.
    fn step_node(&mut self, node: usize, rows: &RowSet, idx: &[usize]) -> Option<f64> {
        let parents = self.graph.parents(node).to_vec();
        let eligible: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&r| self.eligible(node, rows, r))
            .collect();
        if eligible.is_empty() {
            return None;
        }
        match &mut self.models[node] {
            NodeModel::Root(root) => {
                let values: Vec<f64> = eligible.iter().map(|&r| rows.row(r)[node]).collect();
                let (loss, g) = root.nll_and_grad(&values);
                root.apply(&g);
                Some(loss)
            }
            NodeModel::Predictor(p) => {
                let mut inputs = Vec::with_capacity(eligible.len() * parents.len());
                let mut targets = Vec::with_capacity(eligible.len());
                for &r in &eligible {
                    let row = rows.row(r);
                    inputs.extend(parents.iter().map(|&q| row[q]));
                    targets.push(row[node]);
                }
                let (loss, g) = p.mse_and_grad(&inputs, &targets);
                p.apply_grad(&g);
                Some(loss)
            }
        }
    }

    /// One Adam step for `node` on all eligible rows of `batch`. Returns the
    /// pre-update loss (MSE for predictors, mean NLL for Gaussian roots).
    pub fn train_step(&mut self, node: usize, batch: &RowSet) -> Result<f64, LearnerError> {
        self.check_node(node)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.step_node(node, batch, &idx)
            .ok_or(LearnerError::EmptyBatch(node))
    }

    /// `steps` full-batch updates of every node on `rows`.
    pub fn train_on(&mut self, rows: &RowSet, steps: usize) {
        let idx: Vec<usize> = (0..rows.len()).collect();
        for _ in 0..steps {
            for node in 0..self.graph.n_nodes() {
                self.step_node(node, rows, &idx);
            }
        }
    }

    /// Appends executed data to the replay buffer.
    pub fn observe(&mut self, ds: &Dataset) {
        Arc::make_mut(&mut self.buffer).push_dataset(ds);
    }

    /// Per-episode update: `steps_per_episode` minibatches drawn uniformly
    /// from the most recent `window` buffer rows.
    pub fn episode_update<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let len = self.buffer.len();
        if len == 0 {
            return;
        }
        let start = len.saturating_sub(self.cfg.window);
        let buffer = Arc::clone(&self.buffer);
        let mut idx = vec![0usize; self.cfg.batch_size];
        for _ in 0..self.cfg.steps_per_episode {
            for i in idx.iter_mut() {
                *i = rng.random_range(start..len);
            }
            for node in 0..self.graph.n_nodes() {
                self.step_node(node, &buffer, &idx);
            }
        }
    }

    /// Per-node validation losses without touching the ledger.
    ///
    /// Predictors: teacher-forced MSE on rows not clamped on the node. Roots:
    /// `(mean_hat - mean_val)^2 + (std_hat - std_val)^2` against the moments of
    /// rows not clamped on the root.
    pub fn compute_losses(&self, val: &ValidationSet) -> Vec<f64> {
        let n = self.graph.n_nodes();
        let mut out = vec![0.0; n];
        for (node, loss) in out.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..val.len()).filter(|&r| !val.is_clamped(r, node)).collect();
            if rows.is_empty() {
                continue;
            }
            *loss = match &self.models[node] {
                NodeModel::Root(root) => {
                    let m = rows.len() as f64;
                    let mean = rows.iter().map(|&r| val.row(r)[node]).sum::<f64>() / m;
                    let var = rows
                        .iter()
                        .map(|&r| (val.row(r)[node] - mean).powi(2))
                        .sum::<f64>()
                        / m;
                    (root.mean() - mean).powi(2) + (root.std() - var.sqrt()).powi(2)
                }
                NodeModel::Predictor(p) => {
                    let parents = self.graph.parents(node);
                    let mut x = vec![0.0; parents.len()];
                    let mut h = vec![0.0; p.hidden];
                    let mut sse = 0.0;
                    for &r in &rows {
                        let row = val.row(r);
                        for (xi, &q) in x.iter_mut().zip(parents) {
                            *xi = row[q];
                        }
                        p.hidden_into(&x, &mut h);
                        sse += (p.output(&h) - row[node]).powi(2);
                    }
                    sse / rows.len() as f64
                }
            };
        }
        out
    }

    /// Recomputes the ledger on `val` and returns it.
    pub fn evaluate(&mut self, val: &ValidationSet) -> Vec<f64> {
        self.ledger = self.compute_losses(val);
        self.ledger.clone()
    }

    /// Deterministic forward pass of the learned model with the given
    /// columns held fixed; roots sit at their estimated means.
    pub fn forward_mean(&self, clamps: &[(usize, f64)]) -> Vec<f64> {
        let n = self.graph.n_nodes();
        let mut row = vec![0.0; n];
        for &node in self.graph.topological_order() {
            if let Some(&(_, v)) = clamps.iter().find(|(c, _)| *c == node) {
                row[node] = v;
                continue;
            }
            row[node] = match &self.models[node] {
                NodeModel::Root(r) => r.mean(),
                NodeModel::Predictor(p) => {
                    let x: Vec<f64> = self.graph.parents(node).iter().map(|&q| row[q]).collect();
                    p.predict(&x)
                }
            };
        }
        row
    }

    /// Rows from the learner's own generative model: Gaussian roots, noiseless
    /// predictors, clamped columns fixed.
    pub fn sample_self<R: Rng + ?Sized>(&self, clamps: &[(usize, f64)], n: usize, rng: &mut R) -> RowSet {
        let n_nodes = self.graph.n_nodes();
        let clamped: Vec<usize> = clamps.iter().map(|c| c.0).collect();
        let mut out = RowSet::new(n_nodes);
        let mut row = vec![0.0; n_nodes];
        for _ in 0..n {
            for &node in self.graph.topological_order() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                if let Some(&(_, v)) = clamps.iter().find(|(c, _)| *c == node) {
                    row[node] = v;
                    continue;
                }
                row[node] = match &self.models[node] {
                    NodeModel::Root(r) => r.mean() + r.std() * z,
                    NodeModel::Predictor(p) => {
                        let x: Vec<f64> = self.graph.parents(node).iter().map(|&q| row[q]).collect();
                        p.predict(&x)
                    }
                };
            }
            out.push_row(&row, &clamped);
        }
        out
    }

    /// Serializes parameters, optimizer state and ledger.
    pub fn to_tensor_map(&self) -> TensorMap {
        let mut map = TensorMap::new("learner");
        for (i, m) in self.models.iter().enumerate() {
            let name = self.graph.name(i);
            match m {
                NodeModel::Root(r) => {
                    map.insert(format!("{name}.root"), Tensor::new(vec![2], r.params.clone()));
                    insert_adam(&mut map, &format!("{name}.root"), &r.adam);
                }
                NodeModel::Predictor(p) => {
                    let (w1, b1, w2, b2) = NodePredictor::layout(p.n_in, p.hidden);
                    let prefix = format!("{name}.mlp");
                    map.insert(
                        format!("{prefix}.w1"),
                        Tensor::new(vec![p.hidden, p.n_in], p.params[w1..b1].to_vec()),
                    );
                    map.insert(format!("{prefix}.b1"), Tensor::new(vec![p.hidden], p.params[b1..w2].to_vec()));
                    map.insert(format!("{prefix}.w2"), Tensor::new(vec![1, p.hidden], p.params[w2..b2].to_vec()));
                    map.insert(format!("{prefix}.b2"), Tensor::new(vec![1], vec![p.params[b2]]));
                    insert_adam(&mut map, &prefix, &p.adam);
                }
            }
        }
        map.meta.insert(
            "ledger".into(),
            serde_json::to_value(
                self.ledger
                    .iter()
                    .map(|l| l.is_finite().then_some(*l))
                    .collect::<Vec<_>>(),
            )
            .expect("ledger serializes"),
        );
        map.meta.insert("nodes".into(), serde_json::to_value(self.graph.names()).expect("names"));
        map.meta.insert("config".into(), serde_json::to_value(&self.cfg).expect("config"));
        map
    }

    /// Restores a learner for `graph` from a tensor map written by
    /// [`Learner::to_tensor_map`]. The buffer starts empty.
    pub fn from_tensor_map(graph: Arc<CausalGraph>, map: &TensorMap) -> Result<Self, LearnerError> {
        let bad = |m: String| LearnerError::Checkpoint(m);
        let names: Vec<String> = map
            .meta
            .get("nodes")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("missing node list".into()))?;
        if names != graph.names() {
            return Err(bad("node names differ from graph".into()));
        }
        let cfg: LearnerConfig = map
            .meta
            .get("config")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("missing learner config".into()))?;
        let mut rng = crate::rng::from_seed(0);
        let mut learner = Learner::new(Arc::clone(&graph), cfg, &mut rng);
        for i in 0..graph.n_nodes() {
            let name = graph.name(i).to_string();
            match &mut learner.models[i] {
                NodeModel::Root(r) => {
                    let prefix = format!("{name}.root");
                    r.params = map.data(&prefix, &[2]).map_err(bad)?.to_vec();
                    read_adam(map, &prefix, &mut r.adam).map_err(bad)?;
                }
                NodeModel::Predictor(p) => {
                    let prefix = format!("{name}.mlp");
                    let mut params = Vec::with_capacity(p.params.len());
                    params.extend_from_slice(map.data(&format!("{prefix}.w1"), &[p.hidden, p.n_in]).map_err(bad)?);
                    params.extend_from_slice(map.data(&format!("{prefix}.b1"), &[p.hidden]).map_err(bad)?);
                    params.extend_from_slice(map.data(&format!("{prefix}.w2"), &[1, p.hidden]).map_err(bad)?);
                    params.extend_from_slice(map.data(&format!("{prefix}.b2"), &[1]).map_err(bad)?);
                    p.params = params;
                    read_adam(map, &prefix, &mut p.adam).map_err(bad)?;
                }
            }
        }
        let ledger: Vec<Option<f64>> = map
            .meta
            .get("ledger")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("missing ledger".into()))?;
        learner.ledger = ledger.into_iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
        Ok(learner)
    }
}

fn insert_adam(map: &mut TensorMap, prefix: &str, adam: &Adam) {
    map.insert(format!("{prefix}.adam.m"), Tensor::new(vec![adam.m.len()], adam.m.clone()));
    map.insert(format!("{prefix}.adam.v"), Tensor::new(vec![adam.v.len()], adam.v.clone()));
    map.insert(format!("{prefix}.adam.t"), Tensor::new(vec![1], vec![adam.t as f64]));
}

fn read_adam(map: &TensorMap, prefix: &str, adam: &mut Adam) -> Result<(), String> {
    let n = adam.m.len();
    adam.m = map.data(&format!("{prefix}.adam.m"), &[n])?.to_vec();
    adam.v = map.data(&format!("{prefix}.adam.v"), &[n])?.to_vec();
    adam.t = map.data(&format!("{prefix}.adam.t"), &[1])?[0] as u64;
    Ok(())
}

/// Per-node view of a learner's parameters, used for bit-exact comparisons.
pub fn parameter_snapshot(learner: &Learner) -> BTreeMap<usize, Vec<f64>> {
    learner
        .models()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let p = match m {
                NodeModel::Root(r) => r.params.clone(),
                NodeModel::Predictor(p) => p.params.clone(),
            };
            (i, p)
        })
        .collect()
}

/// Rows of a dataset as an observational-or-clamped row set, tagging nothing
/// beyond what the dataset records.
pub fn rows_of(ds: &Dataset) -> RowSet {
    RowSet::from_dataset(ds)
}

impl Provenance {
    /// The single intervened node, if any.
    pub fn intervened_node(&self) -> Option<usize> {
        match self {
            Provenance::Intervention { node, .. } => Some(*node),
            Provenance::Clamp { oscillator, .. } => Some(*oscillator),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scm::{build_benchmark_5node, Intervention, ValueRange};

    fn learner(seed: u64) -> Learner {
        let scm = build_benchmark_5node();
        let mut r = rng::from_seed(seed);
        Learner::new(Arc::new(scm.graph().clone()), LearnerConfig::default(), &mut r)
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = learner(1);
        let b = learner(1);
        assert_eq!(parameter_snapshot(&a), parameter_snapshot(&b));
        match a.model(2) {
            NodeModel::Predictor(p) => assert_eq!(p.hidden_shape(), (2, 64)),
            _ => panic!("X3 should have a predictor"),
        }
        match a.model(0) {
            NodeModel::Root(r) => assert_eq!((r.mean(), r.std()), (0.0, 1.0)),
            _ => panic!("X1 should be a root"),
        }
        assert!(!a.ledger_initialized());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut l = learner(2);
        if let NodeModel::Predictor(p) = l.model_mut(1) {
            let n = p.params().len();
            p.params_mut().iter_mut().for_each(|v| *v = 0.0);
            p.params_mut()[n - 1] = 0.75;
        }
        let mut r = rng::from_seed(0);
        assert_eq!(l.predict(1, &[3.0], false, &mut r).unwrap(), 0.75);
        assert_eq!(
            l.predict(0, &[], false, &mut r),
            Err(LearnerError::RootHasNoPredictor(0))
        );
    }

    #[test]
    fn deterministic_mode_repeats() {
        let l = learner(3);
        let mut r = rng::from_seed(0);
        let a = l.predict(2, &[0.3, 1.1], false, &mut r).unwrap();
        let b = l.predict(2, &[0.3, 1.1], false, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut l = learner(4);
        let scm = build_benchmark_5node();
        let mut r = rng::from_seed(0);
        let ds = scm
            .sample(Some(Intervention::new(0, 1.0)), 4, ValueRange::default(), &mut r)
            .unwrap();
        assert_eq!(
            l.train_step(0, &RowSet::from_dataset(&ds)),
            Err(LearnerError::EmptyBatch(0))
        );
        assert!(l.train_step(1, &RowSet::from_dataset(&ds)).is_ok());
    }

    #[test]
    fn clone_is_isolated() {
        let scm = build_benchmark_5node();
        let mut r = rng::from_seed(5);
        let mut original = learner(5);
        let val = RowSet::from_dataset(&scm.sample(None, 50, ValueRange::default(), &mut r).unwrap());
        original.evaluate(&val);
        let before = parameter_snapshot(&original);
        let ledger = original.ledger().to_vec();
        let mut clone = original.clone();
        let data = RowSet::from_dataset(&scm.sample(None, 64, ValueRange::default(), &mut r).unwrap());
        clone.train_on(&data, 1000);
        clone.evaluate(&val);
        assert_eq!(parameter_snapshot(&original), before);
        assert_eq!(original.ledger(), &ledger[..]);
        assert_ne!(parameter_snapshot(&clone), before);
    }

    #[test]
    fn dropout_variance_edges() {
        let mut l = learner(6);
        let mut r = rng::from_seed(1);
        assert_eq!(
            l.mc_dropout_variance(1, &[1.0], 1, &mut r),
            Err(LearnerError::TooFewPasses)
        );
        if let NodeModel::Predictor(p) = l.model_mut(1) {
            p.set_dropout(0.0);
        }
        assert_eq!(l.mc_dropout_variance(1, &[1.0], 20, &mut r).unwrap(), 0.0);
        let v1 = learner(6).mc_dropout_variance(2, &[1.0, 2.0], 30, &mut rng::from_seed(9)).unwrap();
        let v2 = learner(6).mc_dropout_variance(2, &[1.0, 2.0], 30, &mut rng::from_seed(9)).unwrap();
        assert_eq!(v1, v2);
        assert!(v1 > 0.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let scm = build_benchmark_5node();
        let mut r = rng::from_seed(8);
        let mut l = learner(8);
        let data = RowSet::from_dataset(&scm.sample(None, 64, ValueRange::default(), &mut r).unwrap());
        l.train_on(&data, 3);
        l.evaluate(&data);
        let map = l.to_tensor_map();
        let json = map.to_json().unwrap();
        let back = Learner::from_tensor_map(
            Arc::new(scm.graph().clone()),
            &TensorMap::from_json(&json).unwrap(),
        )
        .unwrap();
        assert_eq!(parameter_snapshot(&back), parameter_snapshot(&l));
        assert_eq!(back.ledger(), l.ledger());
        assert_eq!(back.models(), l.models());
    }
}
