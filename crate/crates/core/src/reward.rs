//! Candidate scoring: information gain from a cloned-learner lookahead plus
//! node importance and diversity bonuses.

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::learner::{Learner, RowSet, ValidationSet};
use crate::policy::InterventionHistory;
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    /// Weight of the importance term.
    pub alpha: f64,
    /// Weight of the diversity term.
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 0.1,
            gamma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub info_gain: f64,
    pub importance: f64,
    pub diversity: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(info_gain: f64, importance: f64, diversity: f64, w: RewardWeights) -> Self {
        RewardBreakdown {
            info_gain,
            importance,
            diversity,
            total: info_gain + w.alpha * importance + w.gamma * diversity,
        }
    }
}

/// Where lookahead probe rows come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// Sample the environment under the candidate.
    Oracle,
    /// Sample the learner's own generative model under the candidate.
    #[serde(rename = "self")]
    SelfModel,
}

impl ProbeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeMode::Oracle => "oracle",
            ProbeMode::SelfModel => "self",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    /// Probe rows per candidate.
    pub rows: usize,
    /// Full-batch Adam steps on the clone.
    pub steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            mode: ProbeMode::Oracle,
            rows: 16,
            steps: 5,
        }
    }
}

/// `L_node / sum_j L_j`, or 0 when the ledger sums to 0.
pub fn node_importance(node: usize, ledger: &[f64]) -> f64 {
    let sum: f64 = ledger.iter().sum();
    if sum > 0.0 {
        ledger[node] / sum
    } else {
        0.0
    }
}

/// `0.5 (1 - n_a / max(1, N)) + 0.5 / (1 + c)` where `c` is the count of the
/// candidate's (action, value bin) cell.
pub fn diversity(action: usize, value: f64, history: &InterventionHistory) -> f64 {
    let frac = history.count(action) as f64 / history.total().max(1) as f64;
    let novelty = 1.0 / (1.0 + history.bin_count(action, value) as f64);
    0.5 * (1.0 - frac) + 0.5 * novelty
}

/// Loss reduction on the validation set from training a clone of `learner`
/// on probe rows for the candidate. The learner's ledger must be current.
/// Returns the gain and the number of probe rows drawn.
pub fn estimate_info_gain(
    action: usize,
    value: f64,
    learner: &Learner,
    env: &dyn Environment,
    val: &ValidationSet,
    probe: &ProbeConfig,
    rng: &mut Stream,
) -> Result<f64> {
    let probe_rows = match probe.mode {
        ProbeMode::Oracle => RowSet::from_dataset(&env.execute(action, value, probe.rows, rng)?),
        ProbeMode::SelfModel => {
            let clamps = env
                .learner_clamps(action, value)
                .filter(|_| env.supports_self_probe())
                .ok_or_else(|| Error::ProbeModeUnavailable(probe.mode.as_str().into()))?;
            learner.sample_self(&clamps, probe.rows, rng)
        }
    };
    let before = learner.total_loss();
    let mut clone = learner.clone();
    clone.train_on(&probe_rows, probe.steps);
    let after: f64 = clone.compute_losses(val).iter().sum();
    Ok(before - after)
}

/// Full reward breakdown for a candidate.
#[allow(clippy::too_many_arguments)]
pub fn score(
    action: usize,
    value: f64,
    learner: &Learner,
    env: &dyn Environment,
    val: &ValidationSet,
    history: &InterventionHistory,
    probe: &ProbeConfig,
    weights: RewardWeights,
    rng: &mut Stream,
) -> Result<RewardBreakdown> {
    let gain = estimate_info_gain(action, value, learner, env, val, probe, rng)?;
    let importance = env
        .importance_node(action)
        .map_or(0.0, |n| node_importance(n, learner.ledger()));
    let d = diversity(action, value, history);
    Ok(RewardBreakdown::new(gain, importance, d, weights))
}
