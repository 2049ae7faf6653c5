//! Intervention-proposal policies: uniform random, round-robin, max-variance
//! and a trainable two-head categorical network with exact log-probabilities.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Tensor, TensorMap};
use crate::learner::{Learner, LearnerError};
use crate::nn::{self, Adam};
use crate::reward::RewardBreakdown;
use crate::scm::ValueRange;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("ledger has not been evaluated yet")]
    LedgerUninitialized,
    #[error("value {0} is not a grid bin center")]
    ValueNotOnGrid(f64),
    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("feature vector has length {got}, expected {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

pub const DEFAULT_BINS: usize = 41;

/// Uniform grid of bin centers covering a closed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl ValueGrid {
    pub fn new(range: ValueRange, bins: usize) -> Self {
        assert!(bins >= 2, "a value grid needs at least two bins");
        ValueGrid {
            lo: range.lo,
            hi: range.hi,
            bins,
        }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.bins - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        if i + 1 == self.bins {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.center(i)).collect()
    }

    /// Nearest bin (clamped to the grid).
    pub fn nearest(&self, v: f64) -> usize {
        let i = ((v - self.lo) / self.step()).round();
        i.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    /// Bin whose center is within 1e-9 of `v`.
    pub fn snap(&self, v: f64) -> Result<usize, PolicyError> {
        let i = self.nearest(v);
        if (self.center(i) - v).abs() <= 1e-9 {
            Ok(i)
        } else {
            Err(PolicyError::ValueNotOnGrid(v))
        }
    }
}

/// Executed-intervention counts per action and per (action, value bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionHistory {
    n_actions: usize,
    grid: ValueGrid,
    counts: Vec<usize>,
    bin_counts: Vec<usize>,
    last: Option<usize>,
    total: usize,
}

impl InterventionHistory {
    pub fn new(n_actions: usize, grid: ValueGrid) -> Self {
        InterventionHistory {
            n_actions,
            grid,
            counts: vec![0; n_actions],
            bin_counts: vec![0; n_actions * grid.bins],
            last: None,
            total: 0,
        }
    }

    pub fn record(&mut self, action: usize, value: f64) {
        self.counts[action] += 1;
        self.bin_counts[action * self.grid.bins + self.grid.nearest(value)] += 1;
        self.last = Some(action);
        self.total += 1;
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }

    pub fn count(&self, action: usize) -> usize {
        self.counts[action]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Count of the (action, bin of `value`) cell.
    pub fn bin_count(&self, action: usize, value: f64) -> usize {
        self.bin_counts[action * self.grid.bins + self.grid.nearest(value)]
    }

    pub fn last(&self) -> Option<usize> {
        self.last
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Fixed-length policy input.
///
/// Layout: `L_i / (1 + L_i)` per learner node, count fraction
/// `n_a / max(1, N)` per action, one-hot of the last action, and progress
/// `t / t_max`. With one action per node this is `3 n + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures(pub Vec<f64>);

impl StateFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn feature_len(n_nodes: usize, n_actions: usize) -> usize {
    n_nodes + 2 * n_actions + 1
}

/// `L / (1 + L)`, mapping `[0, inf)` onto `[0, 1)`.
pub fn squash(l: f64) -> f64 {
    l / (1.0 + l)
}

pub fn featurize(
    ledger: &[f64],
    history: &InterventionHistory,
    t: usize,
    t_max: usize,
) -> Result<StateFeatures, PolicyError> {
    if ledger.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(PolicyError::LedgerUninitialized);
    }
    let a = history.n_actions();
    let mut f = Vec::with_capacity(feature_len(ledger.len(), a));
    f.extend(ledger.iter().map(|&l| squash(l)));
    let denom = history.total().max(1) as f64;
    f.extend(history.counts().iter().map(|&c| c as f64 / denom));
    f.extend((0..a).map(|i| if history.last() == Some(i) { 1.0 } else { 0.0 }));
    f.push(if t_max == 0 {
        0.0
    } else {
        (t as f64 / t_max as f64).min(1.0)
    });
    Ok(StateFeatures(f))
}

/// Reorders a feature vector for relabelled actions: entry `i` of each
/// per-node/per-action block moves to `perm[i]`. Requires one action per node.
pub fn permute_features(f: &[f64], perm: &[usize]) -> Vec<f64> {
    let n = perm.len();
    assert_eq!(f.len(), 3 * n + 1, "feature layout needs one action per node");
    let mut out = f.to_vec();
    for block in 0..3 {
        for (i, &p) in perm.iter().enumerate() {
            out[block * n + p] = f[block * n + i];
        }
    }
    out
}

/// A proposed intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: usize,
    pub value: f64,
    /// Value bin for grid-based proposals.
    pub bin: Option<usize>,
    /// Log-probability (or log-density for continuous proposals) under the
    /// proposing policy at temperature 1.
    pub log_prob: f64,
    pub reward: Option<RewardBreakdown>,
}

impl Candidate {
    pub fn total(&self) -> Option<f64> {
        self.reward.as_ref().map(|r| r.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    #[serde(rename = "roundrobin")]
    RoundRobin,
    #[serde(rename = "maxvar")]
    MaxVariance,
    Ppo,
    Dpo,
    RandomLookahead,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::MaxVariance,
        PolicyKind::Ppo,
        PolicyKind::Dpo,
        PolicyKind::RandomLookahead,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "roundrobin",
            PolicyKind::MaxVariance => "maxvar",
            PolicyKind::Ppo => "ppo",
            PolicyKind::Dpo => "dpo",
            PolicyKind::RandomLookahead => "random-lookahead",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, PolicyKind::Ppo | PolicyKind::Dpo)
    }

    /// Whether candidates are scored by cloned-learner lookahead.
    pub fn uses_lookahead(&self) -> bool {
        matches!(
            self,
            PolicyKind::Ppo | PolicyKind::Dpo | PolicyKind::RandomLookahead
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| crate::Error::UnknownPolicy(s.to_string()))
    }
}

/// Uniform random node and continuous uniform value. The recorded
/// `log_prob` is the log-density `-(ln n + ln width)`.
pub fn propose_random<R: Rng + ?Sized>(n_actions: usize, range: ValueRange, k: usize, rng: &mut R) -> Vec<Candidate> {
    let lp = -((n_actions as f64).ln() + range.width().ln());
    (0..k)
        .map(|_| Candidate {
            action: rng.random_range(0..n_actions),
            value: rng.random_range(range.lo..=range.hi),
            bin: None,
            log_prob: lp,
            reward: None,
        })
        .collect()
}

/// Uniform random action and uniform random grid bin (or no value when
/// `grid` is `None`).
pub fn propose_random_on_grid<R: Rng + ?Sized>(
    n_actions: usize,
    grid: Option<ValueGrid>,
    k: usize,
    rng: &mut R,
) -> Vec<Candidate> {
    (0..k)
        .map(|_| {
            let action = rng.random_range(0..n_actions);
            match grid {
                Some(g) => {
                    let b = rng.random_range(0..g.bins);
                    Candidate {
                        action,
                        value: g.center(b),
                        bin: Some(b),
                        log_prob: -((n_actions as f64).ln() + (g.bins as f64).ln()),
                        reward: None,
                    }
                }
                None => Candidate {
                    action,
                    value: 0.0,
                    bin: None,
                    log_prob: -(n_actions as f64).ln(),
                    reward: None,
                },
            }
        })
        .collect()
}

/// Default round-robin value schedule.
pub const ROUND_ROBIN_VALUES: [f64; 5] = [-4.0, -2.0, 0.0, 2.0, 4.0];

/// Node `t mod n`; value cycles through `schedule` once per full sweep.
pub fn propose_round_robin(t: usize, n_actions: usize, schedule: &[f64]) -> Candidate {
    let value = if schedule.is_empty() {
        0.0
    } else {
        schedule[(t / n_actions) % schedule.len()]
    };
    Candidate {
        action: t % n_actions,
        value,
        bin: None,
        log_prob: 0.0,
        reward: None,
    }
}

/// The max-variance grid: `points` evenly spaced values over the range.
pub fn max_variance_grid(range: ValueRange, points: usize) -> Vec<f64> {
    ValueGrid::new(range, points).centers()
}

/// Candidate maximizing MC-dropout variance summed over the learner children
/// of the clamped columns, evaluated at the learner's deterministic forward
/// means. `clamps(action, value)` maps an action to learner-column clamps.
/// Ties keep the lowest action, then the lowest value.
pub fn propose_max_variance<R, F>(
    learner: &Learner,
    n_actions: usize,
    grid: &[f64],
    passes: usize,
    clamps: F,
    rng: &mut R,
) -> Result<Candidate, PolicyError>
where
    R: Rng + ?Sized,
    F: Fn(usize, f64) -> Vec<(usize, f64)>,
{
    let graph = learner.graph();
    let mut best: Option<(f64, usize, f64)> = None;
    for action in 0..n_actions {
        for &value in grid {
            let fixed = clamps(action, value);
            let row = learner.forward_mean(&fixed);
            let mut children: Vec<usize> = fixed
                .iter()
                .flat_map(|&(c, _)| graph.children(c).to_vec())
                .filter(|ch| !fixed.iter().any(|&(c, _)| c == *ch))
                .collect();
            children.sort_unstable();
            children.dedup();
            let mut var = 0.0;
            for ch in children {
                let x: Vec<f64> = graph.parents(ch).iter().map(|&p| row[p]).collect();
                var += learner.mc_dropout_variance(ch, &x, passes, rng)?;
            }
            if best.is_none_or(|(b, _, _)| var > b) {
                best = Some((var, action, value));
            }
        }
    }
    let (_, action, value) = best.ok_or(PolicyError::InvalidAction {
        action: 0,
        n_actions,
    })?;
    Ok(Candidate {
        action,
        value,
        bin: None,
        log_prob: 0.0,
        reward: None,
    })
}

/// Forward activations of the trainable policy.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub node_logits: Vec<f64>,
    pub bin_logits: Vec<f64>,
}

/// Shared hidden layer feeding a node head and (optionally) a value-bin head.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainablePolicy {
    n_features: usize,
    hidden: usize,
    n_actions: usize,
    grid: Option<ValueGrid>,
    params: Vec<f64>,
    adam: Adam,
}

struct Layout {
    w1: usize,
    b1: usize,
    wn: usize,
    bn: usize,
    wb: usize,
    bb: usize,
    end: usize,
}

impl TrainablePolicy {
    pub fn new<R: Rng + ?Sized>(
        n_features: usize,
        n_actions: usize,
        grid: Option<ValueGrid>,
        hidden: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = TrainablePolicy {
            n_features,
            hidden,
            n_actions,
            grid,
            params: Vec::new(),
            adam: Adam::new(0, lr),
        };
        let l = p.layout();
        p.params = vec![0.0; l.end];
        nn::init_uniform(&mut p.params[l.w1..l.wn], n_features, rng);
        nn::init_uniform(&mut p.params[l.wn..l.end], hidden, rng);
        p.adam = Adam::new(l.end, lr);
        p
    }

    fn n_bins(&self) -> usize {
        self.grid.map_or(0, |g| g.bins)
    }

    fn layout(&self) -> Layout {
        let (f, h, a, b) = (self.n_features, self.hidden, self.n_actions, self.n_bins());
        let w1 = 0;
        let b1 = w1 + h * f;
        let wn = b1 + h;
        let bn = wn + a * h;
        let wb = bn + a;
        let bb = wb + b * h;
        Layout {
            w1,
            b1,
            wn,
            bn,
            wb,
            bb,
            end: bb + b,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn grid(&self) -> Option<ValueGrid> {
        self.grid
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    /// One Adam descent step along a loss gradient.
    pub fn apply_grad(&mut self, grad: &[f64]) {
        self.adam.step(&mut self.params, grad);
    }

    /// Zeroes both output heads, giving uniform distributions.
    pub fn zero_heads(&mut self) {
        let l = self.layout();
        self.params[l.wn..l.end].iter_mut().for_each(|v| *v = 0.0);
    }

    fn check_features(&self, f: &[f64]) -> Result<(), PolicyError> {
        if f.len() != self.n_features {
            return Err(PolicyError::FeatureLength {
                expected: self.n_features,
                got: f.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, f: &[f64]) -> Forward {
        let l = self.layout();
        let mut h = vec![0.0; self.hidden];
        nn::dense_forward(&self.params[l.w1..l.b1], &self.params[l.b1..l.wn], f, &mut h);
        nn::relu_in_place(&mut h);
        let mut node_logits = vec![0.0; self.n_actions];
        nn::dense_forward(&self.params[l.wn..l.bn], &self.params[l.bn..l.wb], &h, &mut node_logits);
        let mut bin_logits = vec![0.0; self.n_bins()];
        nn::dense_forward(&self.params[l.wb..l.bb], &self.params[l.bb..l.end], &h, &mut bin_logits);
        Forward {
            hidden: h,
            node_logits,
            bin_logits,
        }
    }

    pub fn node_log_probs(&self, f: &[f64]) -> Vec<f64> {
        nn::log_softmax(&self.forward(f).node_logits)
    }

    pub fn bin_log_probs(&self, f: &[f64]) -> Vec<f64> {
        nn::log_softmax(&self.forward(f).bin_logits)
    }

    fn resolve_bin(&self, value: f64) -> Result<Option<usize>, PolicyError> {
        match self.grid {
            Some(g) => g.snap(value).map(Some),
            None => Ok(None),
        }
    }

    fn check_action(&self, action: usize) -> Result<(), PolicyError> {
        if action >= self.n_actions {
            Err(PolicyError::InvalidAction {
                action,
                n_actions: self.n_actions,
            })
        } else {
            Ok(())
        }
    }

    /// `log p(action) + log p(bin of value)` at temperature 1.
    pub fn log_prob(&self, f: &[f64], action: usize, value: f64) -> Result<f64, PolicyError> {
        self.check_features(f)?;
        self.check_action(action)?;
        let bin = self.resolve_bin(value)?;
        Ok(self.log_prob_idx(f, action, bin))
    }

    pub fn log_prob_idx(&self, f: &[f64], action: usize, bin: Option<usize>) -> f64 {
        let fw = self.forward(f);
        let mut lp = nn::log_softmax(&fw.node_logits)[action];
        if let Some(b) = bin {
            lp += nn::log_softmax(&fw.bin_logits)[b];
        }
        lp
    }

    /// Log-probability of a candidate, resolving its bin from its value.
    pub fn candidate_log_prob(&self, f: &[f64], c: &Candidate) -> Result<f64, PolicyError> {
        self.log_prob(f, c.action, c.value)
    }

    fn backward(&self, f: &[f64], fw: &Forward, g_node: &[f64], g_bin: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let mut g_h = vec![0.0; self.hidden];
        {
            let (gwn, gbn) = grad[l.wn..l.wb].split_at_mut(l.bn - l.wn);
            nn::dense_backward(&self.params[l.wn..l.bn], &fw.hidden, g_node, gwn, gbn, Some(&mut g_h));
        }
        if !g_bin.is_empty() {
            let mut g_h2 = vec![0.0; self.hidden];
            let (gwb, gbb) = grad[l.wb..l.end].split_at_mut(l.bb - l.wb);
            nn::dense_backward(&self.params[l.wb..l.bb], &fw.hidden, g_bin, gwb, gbb, Some(&mut g_h2));
            for (a, b) in g_h.iter_mut().zip(&g_h2) {
                *a += b;
            }
        }
        for (g, &h) in g_h.iter_mut().zip(&fw.hidden) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let (gw1, gb1) = grad[l.w1..l.wn].split_at_mut(l.b1 - l.w1);
        nn::dense_backward(&self.params[l.w1..l.b1], f, &g_h, gw1, gb1, None);
    }

    /// Adds `scale * d log pi(action, bin) / d params` to `grad` and returns
    /// the log-probability.
    pub fn log_prob_grad(&self, f: &[f64], action: usize, bin: Option<usize>, scale: f64, grad: &mut [f64]) -> f64 {
        let fw = self.forward(f);
        let lpn = nn::log_softmax(&fw.node_logits);
        let mut g_node: Vec<f64> = lpn.iter().map(|l| -scale * l.exp()).collect();
        g_node[action] += scale;
        let mut lp = lpn[action];
        let mut g_bin = Vec::new();
        if let Some(b) = bin {
            let lpb = nn::log_softmax(&fw.bin_logits);
            g_bin = lpb.iter().map(|l| -scale * l.exp()).collect();
            g_bin[b] += scale;
            lp += lpb[b];
        }
        self.backward(f, &fw, &g_node, &g_bin, grad);
        lp
    }

    /// Entropy of the joint (node, bin) distribution; adds `scale * dH/dparams`
    /// to `grad`.
    pub fn entropy_grad(&self, f: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let fw = self.forward(f);
        let head = |logits: &[f64]| -> (f64, Vec<f64>) {
            if logits.is_empty() {
                return (0.0, Vec::new());
            }
            let lp = nn::log_softmax(logits);
            let h: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
            let g = lp.iter().map(|l| -scale * l.exp() * (l + h)).collect();
            (h, g)
        };
        let (hn, g_node) = head(&fw.node_logits);
        let (hb, g_bin) = head(&fw.bin_logits);
        self.backward(f, &fw, &g_node, &g_bin, grad);
        hn + hb
    }

    /// `k` independent draws with logits divided by `temperature`. The
    /// recorded log-probabilities are untempered.
    pub fn propose<R: Rng + ?Sized>(&self, f: &[f64], k: usize, temperature: f64, rng: &mut R) -> Vec<Candidate> {
        assert!(temperature > 0.0, "temperature must be positive");
        let fw = self.forward(f);
        let lpn = nn::log_softmax(&fw.node_logits);
        let lpb = nn::log_softmax(&fw.bin_logits);
        let tempered = |logits: &[f64]| {
            let z: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
            nn::softmax(&z)
        };
        let pn = tempered(&fw.node_logits);
        let pb = tempered(&fw.bin_logits);
        (0..k)
            .map(|_| {
                let action = nn::sample_categorical(&pn, rng);
                match self.grid {
                    Some(g) => {
                        let b = nn::sample_categorical(&pb, rng);
                        Candidate {
                            action,
                            value: g.center(b),
                            bin: Some(b),
                            log_prob: lpn[action] + lpb[b],
                            reward: None,
                        }
                    }
                    None => Candidate {
                        action,
                        value: 0.0,
                        bin: None,
                        log_prob: lpn[action],
                        reward: None,
                    },
                }
            })
            .collect()
    }

    /// Maximum-likelihood fit to `(features, action, bin)` examples with
    /// full-batch Adam at `lr` for `epochs` steps. The policy's own optimizer
    /// state is reset afterwards. Returns the final mean negative
    /// log-likelihood.
    pub fn behavior_clone(&mut self, data: &[(Vec<f64>, usize, Option<usize>)], epochs: usize, lr: f64) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let saved_lr = self.adam.lr;
        self.adam.reset();
        self.adam.lr = lr;
        let m = data.len() as f64;
        let mut nll = 0.0;
        for _ in 0..epochs {
            let mut grad = vec![0.0; self.params.len()];
            nll = 0.0;
            for (f, a, b) in data {
                nll -= self.log_prob_grad(f, *a, *b, -1.0 / m, &mut grad) / m;
            }
            self.apply_grad(&grad);
        }
        self.adam.reset();
        self.adam.lr = saved_lr;
        nll
    }

    /// Copy acting on relabelled actions: action `i` becomes `perm[i]`, and
    /// inputs are expected in [`permute_features`] order.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        assert_eq!(n, self.n_actions);
        assert_eq!(self.n_features, 3 * n + 1);
        let l = self.layout();
        let mut out = self.clone();
        for j in 0..self.hidden {
            let row = &self.params[l.w1 + j * self.n_features..l.w1 + (j + 1) * self.n_features];
            let new_row = permute_features(row, perm);
            out.params[l.w1 + j * self.n_features..l.w1 + (j + 1) * self.n_features].copy_from_slice(&new_row);
        }
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..self.hidden {
                out.params[l.wn + p * self.hidden + j] = self.params[l.wn + i * self.hidden + j];
            }
            out.params[l.bn + p] = self.params[l.bn + i];
        }
        out
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let l = self.layout();
        let (f, h, a, b) = (self.n_features, self.hidden, self.n_actions, self.n_bins());
        let mut map = TensorMap::new("policy");
        let p = &self.params;
        map.insert("hidden.w".into(), Tensor::new(vec![h, f], p[l.w1..l.b1].to_vec()));
        map.insert("hidden.b".into(), Tensor::new(vec![h], p[l.b1..l.wn].to_vec()));
        map.insert("node_head.w".into(), Tensor::new(vec![a, h], p[l.wn..l.bn].to_vec()));
        map.insert("node_head.b".into(), Tensor::new(vec![a], p[l.bn..l.wb].to_vec()));
        map.insert("bin_head.w".into(), Tensor::new(vec![b, h], p[l.wb..l.bb].to_vec()));
        map.insert("bin_head.b".into(), Tensor::new(vec![b], p[l.bb..l.end].to_vec()));
        map.meta.insert("grid".into(), serde_json::to_value(self.grid).expect("grid"));
        map.meta.insert("lr".into(), serde_json::json!(self.adam.lr));
        map
    }

    pub fn from_tensor_map(map: &TensorMap) -> Result<Self, PolicyError> {
        let bad = PolicyError::Checkpoint;
        let grid: Option<ValueGrid> = map
            .meta
            .get("grid")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("missing grid".into()))?;
        let lr = map.meta.get("lr").and_then(|v| v.as_f64()).unwrap_or(1e-5);
        let hw = map
            .tensors
            .get("hidden.w")
            .ok_or_else(|| bad("missing hidden.w".into()))?;
        let (h, f) = match hw.shape[..] {
            [h, f] => (h, f),
            _ => return Err(bad("hidden.w must be 2-D".into())),
        };
        let a = map
            .tensors
            .get("node_head.b")
            .map(|t| t.data.len())
            .ok_or_else(|| bad("missing node_head.b".into()))?;
        let b = grid.map_or(0, |g| g.bins);
        let mut params = Vec::new();
        for (name, shape) in [
            ("hidden.w", vec![h, f]),
            ("hidden.b", vec![h]),
            ("node_head.w", vec![a, h]),
            ("node_head.b", vec![a]),
            ("bin_head.w", vec![b, h]),
            ("bin_head.b", vec![b]),
        ] {
            params.extend_from_slice(map.data(name, &shape).map_err(bad)?);
        }
        let n = params.len();
        Ok(TrainablePolicy {
            n_features: f,
            hidden: h,
            n_actions: a,
            grid,
            params,
            adam: Adam::new(n, lr),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn policy(seed: u64) -> TrainablePolicy {
        let grid = ValueGrid::new(ValueRange::default(), DEFAULT_BINS);
        TrainablePolicy::new(16, 5, Some(grid), 64, 1e-3, &mut rng::from_seed(seed))
    }

    #[test]
    fn grid_centers() {
        let g = ValueGrid::new(ValueRange::default(), 41);
        assert_eq!(g.step(), 0.25);
        assert_eq!(g.center(0), -5.0);
        assert_eq!(g.center(20), 0.0);
        assert_eq!(g.center(40), 5.0);
        assert_eq!(g.snap(1.25), Ok(25));
        assert!(g.snap(1.3).is_err());
    }

    #[test]
    fn uniform_log_prob() {
        let mut p = policy(1);
        p.zero_heads();
        let f = vec![0.3; 16];
        let lp = p.log_prob(&f, 3, 2.5).unwrap();
        assert!((lp + (5f64.ln() + 41f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn cold_temperature_gives_argmax() {
        let p = policy(2);
        let f = vec![0.5; 16];
        let c = p.propose(&f, 4, 1e-6, &mut rng::from_seed(3));
        assert!(c.windows(2).all(|w| w[0].action == w[1].action && w[0].bin == w[1].bin));
    }

    #[test]
    fn features_for_five_nodes() {
        let g = ValueGrid::new(ValueRange::default(), DEFAULT_BINS);
        let h = InterventionHistory::new(5, g);
        let f = featurize(&[0.0; 5], &h, 0, 100).unwrap();
        assert_eq!(f.len(), 16);
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(
            featurize(&[f64::INFINITY; 5], &h, 0, 100),
            Err(PolicyError::LedgerUninitialized)
        );
    }

    #[test]
    fn round_robin_schedule() {
        assert_eq!(propose_round_robin(0, 5, &ROUND_ROBIN_VALUES).action, 0);
        assert_eq!(propose_round_robin(5, 5, &ROUND_ROBIN_VALUES).action, 0);
        assert_eq!(propose_round_robin(7, 5, &ROUND_ROBIN_VALUES).action, 2);
        assert_eq!(propose_round_robin(7, 5, &ROUND_ROBIN_VALUES).value, -2.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = policy(4);
        let json = p.to_tensor_map().to_json().unwrap();
        let back = TrainablePolicy::from_tensor_map(&TensorMap::from_json(&json).unwrap()).unwrap();
        assert_eq!(back.params(), p.params());
    }
}
