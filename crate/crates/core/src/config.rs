//! Declarative run configuration (TOML). Unknown keys are rejected, and a
//! resolved configuration serializes back to an equivalent file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::RegimeSpec;
use crate::convergence::ConvergenceConfig;
use crate::dynamics::DuffingParams;
use crate::learner::LearnerConfig;
use crate::reward::{ProbeConfig, RewardWeights};
use crate::scm::{ScmSpec, ValueRange};
use crate::trainers::{DpoConfig, PpoConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("could not serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub const DEFAULT_SEEDS: [u64; 5] = [42, 123, 456, 789, 1011];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchiveConfig {
    /// CSV to load; when absent a synthetic archive is generated.
    pub path: Option<PathBuf>,
    pub target: String,
    /// Regimes for a loaded CSV.
    pub regimes: Vec<RegimeSpec>,
    pub synthetic_rows: usize,
    pub synthetic_regimes: usize,
    /// Seed of the synthetic generator (fixed across run seeds).
    pub synthetic_seed: u64,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            path: None,
            target: "y_next".into(),
            regimes: Vec::new(),
            synthetic_rows: 720,
            synthetic_regimes: 4,
            synthetic_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// `scm5`, `scm15`, `duffing`, `archive` or `custom`.
    pub name: String,
    /// Intervention range; `None` uses the environment default.
    pub range: Option<ValueRange>,
    /// Model for `custom`.
    pub scm: Option<ScmSpec>,
    pub duffing: DuffingParams,
    pub archive: ArchiveConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            name: "scm5".into(),
            range: None,
            scm: None,
            duffing: DuffingParams::default(),
            archive: ArchiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectBy {
    /// Execute the candidate with the highest total reward.
    Reward,
    /// Execute the candidate with the highest information gain.
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyNetConfig {
    pub hidden: usize,
    pub bins: usize,
    pub temperature: f64,
    /// Behaviour-cloning learning rate for the warm start.
    pub bc_lr: f64,
    pub bc_epochs: usize,
    /// Candidates scored per warm-start step for the greedy teacher.
    pub bc_candidates: usize,
}

impl Default for PolicyNetConfig {
    fn default() -> Self {
        PolicyNetConfig {
            hidden: 64,
            bins: crate::policy::DEFAULT_BINS,
            temperature: 0.7,
            bc_lr: 3e-3,
            bc_epochs: 200,
            bc_candidates: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    /// Candidates per episode.
    pub k: usize,
    /// Random interventions executed before the first episode.
    pub warm_start: usize,
    pub probe: ProbeConfig,
    pub reward: RewardWeights,
    pub select_by: SelectBy,
    pub convergence: ConvergenceConfig,
    /// Run exactly this many episodes, ignoring convergence.
    pub episodes: Option<usize>,
    pub maxvar_passes: usize,
    pub maxvar_grid: usize,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            k: 4,
            warm_start: 200,
            probe: ProbeConfig::default(),
            reward: RewardWeights::default(),
            select_by: SelectBy::Reward,
            convergence: ConvergenceConfig::default(),
            episodes: None,
            maxvar_passes: 20,
            maxvar_grid: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Fixed 100-episode budget instead of per-node convergence.
    pub no_pernode_convergence: bool,
    /// Roots become zero-input predictors trained on every row.
    pub no_root_learner: bool,
    /// Policy parameters are never updated after the warm start.
    pub no_dpo: bool,
    /// Diversity weight set to zero.
    pub no_diversity: bool,
}

/// Episodes run under `no_pernode_convergence`.
pub const FIXED_ABLATION_EPISODES: usize = 100;

impl Ablation {
    pub fn label(&self) -> &'static str {
        match (
            self.no_pernode_convergence,
            self.no_root_learner,
            self.no_dpo,
            self.no_diversity,
        ) {
            (false, false, false, false) => "full",
            (true, false, false, false) => "no-pernode-convergence",
            (false, true, false, false) => "no-root-learner",
            (false, false, true, false) => "no-dpo",
            (false, false, false, true) => "no-diversity",
            _ => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: usize,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    pub policy_net: PolicyNetConfig,
    pub dpo: DpoConfig,
    pub ppo: PpoConfig,
    pub orchestrator: OrchestratorConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            policy: "dpo".into(),
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: None,
            jobs: 1,
            env: EnvConfig::default(),
            learner: LearnerConfig::default(),
            policy_net: PolicyNetConfig::default(),
            dpo: DpoConfig::default(),
            ppo: PpoConfig::default(),
            orchestrator: OrchestratorConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.orchestrator.k == 0 {
            return bad("orchestrator.k must be >= 1");
        }
        if self.policy_net.bins < 2 {
            return bad("policy_net.bins must be >= 2");
        }
        if !(self.policy_net.temperature > 0.0) {
            return bad("policy_net.temperature must be positive");
        }
        if !(self.dpo.beta > 0.0) || self.dpo.refresh_period == 0 {
            return bad("dpo.beta must be positive and dpo.refresh_period >= 1");
        }
        if !(self.ppo.lambda > 0.0 && self.ppo.lambda <= 1.0) || !(self.ppo.clip > 0.0) {
            return bad("ppo.lambda must lie in (0, 1] and ppo.clip must be positive");
        }
        if self.learner.n_exec == 0 || self.learner.batch_size == 0 {
            return bad("learner.n_exec and learner.batch_size must be >= 1");
        }
        if let Some(r) = self.env.range {
            if !(r.hi > r.lo) {
                return bad("env.range.hi must exceed env.range.lo");
            }
        }
        self.orchestrator
            .convergence
            .validate()
            .map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Effective episode budget: `Some(n)` for fixed-length runs, `None` for
    /// convergence-terminated runs.
    pub fn fixed_episodes(&self) -> Option<usize> {
        if self.ablation.no_pernode_convergence {
            Some(FIXED_ABLATION_EPISODES)
        } else {
            self.orchestrator.episodes
        }
    }

    pub fn effective_reward(&self) -> RewardWeights {
        let mut w = self.orchestrator.reward;
        if self.ablation.no_diversity {
            w.gamma = 0.0;
        }
        w
    }

    pub fn effective_learner(&self) -> LearnerConfig {
        let mut l = self.learner.clone();
        if self.ablation.no_root_learner {
            l.root_learner = false;
        }
        l
    }
}
