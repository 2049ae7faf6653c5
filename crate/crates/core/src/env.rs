//! Environments the experiment loop can act on.
//!
//! An environment exposes a set of discrete actions (SCM nodes, clamped
//! oscillators, archive regimes), optionally with a continuous value, and
//! answers each executed action with rows in the learner's column layout.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::archive::{Archive, ArchiveError};
use crate::dataset::{Dataset, Provenance};
use crate::dynamics::{self, Clamp, DuffingParams, SnapshotTriple};
use crate::error::Result;
use crate::graph::CausalGraph;
use crate::learner::{Learner, RowSet, ValidationSet};
use crate::rng::Stream;
use crate::scm::{Intervention, OracleScm, ValueRange};

/// Observational rows in every validation set.
pub const VALIDATION_OBS_ROWS: usize = 200;
/// Rows per (action, value) pair in the interventional part of validation.
pub const VALIDATION_ROWS_PER_POINT: usize = 40;

/// The five validation intervention values: 10%, 30%, ..., 90% of the range
/// (`{-4, -2, 0, 2, 4}` on `[-5, 5]`).
pub fn validation_grid(range: ValueRange) -> [f64; 5] {
    [0.1, 0.3, 0.5, 0.7, 0.9].map(|q| {
        let v = range.lo + q * range.width();
        if v.abs() < 1e-12 {
            0.0
        } else {
            v
        }
    })
}

pub trait Environment: Send + Sync {
    /// Short identifier such as `scm5` or `duffing`.
    fn name(&self) -> &str;

    /// Graph over the learner's columns.
    fn graph(&self) -> &Arc<CausalGraph>;

    fn action_names(&self) -> Vec<String>;

    fn n_actions(&self) -> usize {
        self.action_names().len()
    }

    /// Whether actions carry a continuous value.
    fn has_values(&self) -> bool {
        true
    }

    fn value_range(&self) -> ValueRange;

    /// Runs `action` at `value` and returns `n` rows in learner layout.
    fn execute(&self, action: usize, value: f64, n: usize, rng: &mut Stream) -> Result<Dataset>;

    /// Frozen held-out rows defining the ledger.
    fn validation_set(&self, rng: &mut Stream) -> Result<ValidationSet>;

    /// Learner columns held fixed by `action` at `value`, or `None` when the
    /// action is not an intervention on learner columns.
    fn learner_clamps(&self, action: usize, value: f64) -> Option<Vec<(usize, f64)>>;

    /// Whether probes may come from the learner's own generative model.
    fn supports_self_probe(&self) -> bool {
        false
    }

    /// Learner node whose ledger entry measures the importance of `action`.
    fn importance_node(&self, action: usize) -> Option<usize>;

    /// Actions counted in the collider-parent concentration fraction.
    fn collider_parent_actions(&self) -> Vec<usize>;

    /// Environment-specific end-of-run metrics.
    fn extra_metrics(&self, _learner: &Learner) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

/// Parents of nodes with at least two parents.
fn collider_parents(graph: &CausalGraph) -> Vec<usize> {
    let mut out: Vec<usize> = graph
        .colliders()
        .into_iter()
        .flat_map(|c| graph.parents(c).to_vec())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// An oracle SCM; actions are `do(node = value)`.
#[derive(Debug, Clone)]
pub struct ScmEnv {
    name: String,
    scm: OracleScm,
    graph: Arc<CausalGraph>,
    range: ValueRange,
}

impl ScmEnv {
    pub fn new(name: impl Into<String>, scm: OracleScm, range: ValueRange) -> Self {
        ScmEnv {
            name: name.into(),
            graph: Arc::new(scm.graph().clone()),
            scm,
            range,
        }
    }

    pub fn scm(&self) -> &OracleScm {
        &self.scm
    }
}

impl Environment for ScmEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn graph(&self) -> &Arc<CausalGraph> {
        &self.graph
    }

    fn action_names(&self) -> Vec<String> {
        self.graph.names().to_vec()
    }

    fn value_range(&self) -> ValueRange {
        self.range
    }

    fn execute(&self, action: usize, value: f64, n: usize, rng: &mut Stream) -> Result<Dataset> {
        Ok(self
            .scm
            .sample(Some(Intervention::new(action, value)), n, self.range, rng)?)
    }

    /// Observational rows plus, for every node that is a parent of some
    /// node, rows under `do(parent = u)` for each validation grid value.
    fn validation_set(&self, rng: &mut Stream) -> Result<ValidationSet> {
        let mut val = RowSet::new(self.graph.n_nodes());
        val.push_dataset(&self.scm.sample(None, VALIDATION_OBS_ROWS, self.range, rng)?);
        let mut parents: Vec<usize> = (0..self.graph.n_nodes())
            .flat_map(|i| self.graph.parents(i).to_vec())
            .collect();
        parents.sort_unstable();
        parents.dedup();
        for p in parents {
            for u in validation_grid(self.range) {
                let ds = self.scm.sample(
                    Some(Intervention::new(p, u)),
                    VALIDATION_ROWS_PER_POINT,
                    self.range,
                    rng,
                )?;
                val.push_dataset(&ds);
            }
        }
        Ok(val)
    }

    fn learner_clamps(&self, action: usize, value: f64) -> Option<Vec<(usize, f64)>> {
        Some(vec![(action, value)])
    }

    fn supports_self_probe(&self) -> bool {
        true
    }

    fn importance_node(&self, action: usize) -> Option<usize> {
        Some(action)
    }

    fn collider_parent_actions(&self) -> Vec<usize> {
        collider_parents(&self.graph)
    }
}

/// Duffing chain seen through time-unrolled snapshot triples.
///
/// Learner columns are `xi_prev` (block 0), `xi` (block 1) and `xi_next`
/// (block 2) for each oscillator `i`. `xi_next` has parents `xi_prev`, `xi`
/// and the current positions of `i`'s chain neighbours; the other columns are
/// roots. Action `j` clamps oscillator `j`, fixing its three columns.
#[derive(Debug, Clone)]
pub struct DuffingEnv {
    params: DuffingParams,
    graph: Arc<CausalGraph>,
    range: ValueRange,
}

impl DuffingEnv {
    pub fn new(params: DuffingParams, range: ValueRange) -> Result<Self> {
        params.validate()?;
        let n = params.n_osc;
        let mut names = Vec::with_capacity(3 * n);
        for suffix in ["_prev", "", "_next"] {
            for i in 1..=n {
                names.push(format!("x{i}{suffix}"));
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, 2 * n + i));
            edges.push((n + i, 2 * n + i));
            if i > 0 {
                edges.push((n + i - 1, 2 * n + i));
            }
            if i + 1 < n {
                edges.push((n + i + 1, 2 * n + i));
            }
        }
        let graph = CausalGraph::with_names(names, &edges)?;
        Ok(DuffingEnv {
            params,
            graph: Arc::new(graph),
            range,
        })
    }

    pub fn params(&self) -> &DuffingParams {
        &self.params
    }

    fn n_osc(&self) -> usize {
        self.params.n_osc
    }

    /// `n` triples from one fresh trajectory.
    fn triples(&self, clamp: Option<Clamp>, n: usize, rng: &mut Stream) -> Result<Dataset> {
        let stride = self.params.stride;
        let traj = dynamics::simulate(&self.params, clamp, (n + 2) * stride, stride, rng)?;
        let k = self.n_osc();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let mut row = Vec::with_capacity(3 * k);
                row.extend_from_slice(&traj.positions[t]);
                row.extend_from_slice(&traj.positions[t + 1]);
                row.extend_from_slice(&traj.positions[t + 2]);
                row
            })
            .collect();
        let (prov, clamped) = match clamp {
            Some(c) => (
                Provenance::Clamp {
                    oscillator: c.index,
                    value: c.value,
                },
                vec![c.index, k + c.index, 2 * k + c.index],
            ),
            None => (Provenance::Observational, vec![]),
        };
        Ok(Dataset::from_rows(self.graph.names().to_vec(), &rows, prov, clamped)?)
    }

    /// Least-squares coupling readout over a row set in learner layout.
    pub fn coupling_estimate(&self, rows: &RowSet) -> Option<f64> {
        let k = self.n_osc();
        let h = self.params.dt * self.params.stride as f64;
        let skip: Vec<usize> = (0..k).filter(|&i| self.params.is_forced(i)).collect();
        let triples: Vec<SnapshotTriple<'_>> = (0..rows.len())
            .map(|r| {
                let row = rows.row(r);
                let clamped = rows.clamped(r).first().map(|&c| c % k);
                SnapshotTriple {
                    prev: &row[..k],
                    cur: &row[k..2 * k],
                    next: &row[2 * k..],
                    clamped,
                }
            })
            .collect();
        dynamics::estimate_coupling(&triples, h, &skip)
    }
}

impl Environment for DuffingEnv {
    fn name(&self) -> &str {
        "duffing"
    }

    fn graph(&self) -> &Arc<CausalGraph> {
        &self.graph
    }

    fn action_names(&self) -> Vec<String> {
        (1..=self.n_osc()).map(|i| format!("x{i}")).collect()
    }

    fn value_range(&self) -> ValueRange {
        self.range
    }

    fn execute(&self, action: usize, value: f64, n: usize, rng: &mut Stream) -> Result<Dataset> {
        self.range.check(value)?;
        self.triples(Some(Clamp { index: action, value }), n, rng)
    }

    fn validation_set(&self, rng: &mut Stream) -> Result<ValidationSet> {
        let mut val = RowSet::new(self.graph.n_nodes());
        let per_traj = VALIDATION_OBS_ROWS / 4;
        for _ in 0..4 {
            val.push_dataset(&self.triples(None, per_traj, rng)?);
        }
        for j in 0..self.n_osc() {
            for u in validation_grid(self.range) {
                let c = Clamp { index: j, value: u };
                val.push_dataset(&self.triples(Some(c), VALIDATION_ROWS_PER_POINT, rng)?);
            }
        }
        Ok(val)
    }

    fn learner_clamps(&self, action: usize, value: f64) -> Option<Vec<(usize, f64)>> {
        let k = self.n_osc();
        Some(vec![(action, value), (k + action, value), (2 * k + action, value)])
    }

    fn importance_node(&self, action: usize) -> Option<usize> {
        Some(2 * self.n_osc() + action)
    }

    /// Oscillators feeding more than one `next` column: all but the chain ends.
    fn collider_parent_actions(&self) -> Vec<usize> {
        (1..self.n_osc().saturating_sub(1)).collect()
    }

    fn extra_metrics(&self, learner: &Learner) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(k_hat) = self.coupling_estimate(learner.buffer()) {
            out.insert("coupling_estimate".into(), k_hat);
            out.insert(
                "coupling_error".into(),
                dynamics::coupling_error(k_hat, self.params.coupling),
            );
        }
        out
    }
}

/// Regime selection over a static archive. Every fifth row of the archive is
/// held out for validation; actions draw from the remaining rows of a regime.
#[derive(Debug, Clone)]
pub struct ArchiveEnv {
    archive: Archive,
    graph: Arc<CausalGraph>,
    train_rows: Vec<Vec<usize>>,
    val_rows: Vec<usize>,
}

/// Every `HOLDOUT_EVERY`-th archive row is reserved for validation.
pub const HOLDOUT_EVERY: usize = 5;

impl ArchiveEnv {
    pub fn new(archive: Archive) -> Result<Self> {
        let names = archive.column_names();
        let target = names.len() - 1;
        let edges: Vec<(usize, usize)> = (0..target).map(|f| (f, target)).collect();
        let graph = CausalGraph::with_names(names, &edges)?;
        let is_val = |r: usize| r % HOLDOUT_EVERY == HOLDOUT_EVERY - 1;
        let train_rows = archive
            .regimes()
            .iter()
            .map(|reg| reg.rows.clone().filter(|&r| !is_val(r)).collect())
            .collect();
        let val_rows = archive
            .regimes()
            .iter()
            .flat_map(|reg| reg.rows.clone())
            .filter(|&r| is_val(r))
            .collect();
        Ok(ArchiveEnv {
            archive,
            graph: Arc::new(graph),
            train_rows,
            val_rows,
        })
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    /// Held-out rows of one regime.
    pub fn regime_validation(&self, regime: usize) -> ValidationSet {
        let range = &self.archive.regimes()[regime].rows;
        let mut val = RowSet::new(self.graph.n_nodes());
        for &r in self.val_rows.iter().filter(|r| range.contains(r)) {
            val.push_row(&self.archive.row(r), &[]);
        }
        val
    }
}

impl Environment for ArchiveEnv {
    fn name(&self) -> &str {
        "archive"
    }

    fn graph(&self) -> &Arc<CausalGraph> {
        &self.graph
    }

    fn action_names(&self) -> Vec<String> {
        self.archive
            .regimes()
            .iter()
            .map(|r| r.spec.label.clone())
            .collect()
    }

    fn has_values(&self) -> bool {
        false
    }

    fn value_range(&self) -> ValueRange {
        ValueRange::default()
    }

    fn execute(&self, action: usize, _value: f64, n: usize, rng: &mut Stream) -> Result<Dataset> {
        let rows = self
            .train_rows
            .get(action)
            .ok_or_else(|| ArchiveError::InvalidQuery(format!("regime {action} out of range")))?;
        Ok(self.archive.sample_rows(action, rows, n, rng)?)
    }

    fn validation_set(&self, _rng: &mut Stream) -> Result<ValidationSet> {
        let mut val = RowSet::new(self.graph.n_nodes());
        for &r in &self.val_rows {
            val.push_row(&self.archive.row(r), &[]);
        }
        Ok(val)
    }

    fn learner_clamps(&self, _action: usize, _value: f64) -> Option<Vec<(usize, f64)>> {
        None
    }

    fn importance_node(&self, _action: usize) -> Option<usize> {
        None
    }

    fn collider_parent_actions(&self) -> Vec<usize> {
        Vec::new()
    }
}
