//! Per-node convergence: every ledger entry below its threshold for a window
//! of consecutive episodes, after a minimum episode count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// Threshold applied to every node unless `per_node` overrides it.
    pub threshold: f64,
    /// Optional per-node thresholds (same order as the ledger).
    pub per_node: Vec<f64>,
    pub window: usize,
    pub min_episodes: usize,
    pub max_episodes: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            threshold: 0.1,
            per_node: Vec::new(),
            window: 10,
            min_episodes: 40,
            max_episodes: 300,
        }
    }
}

impl ConvergenceConfig {
    pub fn threshold_for(&self, node: usize) -> f64 {
        self.per_node.get(node).copied().unwrap_or(self.threshold)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("convergence window must be >= 1".into());
        }
        if self.min_episodes > self.max_episodes {
            return Err("min_episodes must not exceed max_episodes".into());
        }
        Ok(())
    }

    fn passes(&self, ledger: &[f64]) -> bool {
        ledger
            .iter()
            .enumerate()
            .all(|(i, &l)| l < self.threshold_for(i))
    }
}

/// `history[e]` is the ledger after episode `e + 1`. Returns true iff at least
/// `min_episodes` episodes have completed and the last `window` ledgers all
/// satisfy `L_i < tau_i`.
pub fn check_convergence(history: &[Vec<f64>], cfg: &ConvergenceConfig) -> bool {
    let n = history.len();
    n >= cfg.min_episodes
        && n >= cfg.window
        && history[n - cfg.window..].iter().all(|l| cfg.passes(l))
}

/// First episode (1-based) at which [`check_convergence`] holds.
pub fn convergence_episode(history: &[Vec<f64>], cfg: &ConvergenceConfig) -> Option<usize> {
    (1..=history.len()).find(|&e| check_convergence(&history[..e], cfg))
}
