//! The closed experiment loop: propose candidates, score them on cloned
//! learners, execute the best, update the learner and the policy, and stop on
//! per-node convergence or a fixed budget.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{generate_synthetic_archive, load_archive};
use crate::config::{ConfigError, EnvConfig, RunConfig, SelectBy};
use crate::convergence::{check_convergence, convergence_episode};
use crate::env::{validation_grid, ArchiveEnv, DuffingEnv, Environment, ScmEnv};
use crate::error::{Error, Result};
use crate::learner::{Learner, ValidationSet};
use crate::policy::{
    featurize, feature_len, max_variance_grid, propose_max_variance, propose_random, propose_random_on_grid,
    propose_round_robin, Candidate, InterventionHistory, PolicyKind, TrainablePolicy, ValueGrid,
};
use crate::reward::{score, ProbeMode};
use crate::rng::{self, tags, Stream};
use crate::scm::{build_benchmark_15node, build_benchmark_5node, OracleScm, ValueRange};
use crate::stats;
use crate::trainers::{
    dpo_update, make_preference_pairs, ppo_update, refresh_reference, Critic, DpoStats, PpoStats, PpoStep,
};

pub const ENV_NAMES: [&str; 5] = ["scm5", "scm15", "duffing", "archive", "custom"];

/// Default intervention range for the oscillator chain.
pub const DUFFING_RANGE: ValueRange = ValueRange { lo: -2.0, hi: 2.0 };

/// Builds the environment named in `cfg`.
pub fn build_env(cfg: &EnvConfig) -> Result<Box<dyn Environment>> {
    let range = cfg.range;
    Ok(match cfg.name.as_str() {
        "scm5" => Box::new(ScmEnv::new("scm5", build_benchmark_5node(), range.unwrap_or_default())),
        "scm15" => Box::new(ScmEnv::new("scm15", build_benchmark_15node(), range.unwrap_or_default())),
        "custom" => {
            let spec = cfg
                .scm
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("env 'custom' needs an [env.scm] table".into()))?;
            Box::new(ScmEnv::new("custom", OracleScm::from_spec(spec)?, range.unwrap_or_default()))
        }
        "duffing" => Box::new(DuffingEnv::new(cfg.duffing.clone(), range.unwrap_or(DUFFING_RANGE))?),
        "archive" => {
            let a = &cfg.archive;
            let archive = match &a.path {
                Some(p) => load_archive(p, &a.target, &a.regimes)?,
                None => generate_synthetic_archive(
                    a.synthetic_rows,
                    a.synthetic_regimes,
                    &mut rng::from_seed(a.synthetic_seed),
                )?,
            };
            Box::new(ArchiveEnv::new(archive)?)
        }
        other => return Err(Error::UnknownEnvironment(other.to_string())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "trainer", rename_all = "lowercase")]
pub enum TrainMetrics {
    Dpo(DpoStats),
    Ppo(PpoStats),
}

/// One episode: the scored candidates, the executed one, and the ledger
/// after the learner update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub candidates: Vec<Candidate>,
    /// Index of the executed candidate.
    pub executed: usize,
    pub action: usize,
    pub value: f64,
    pub ledger: Vec<f64>,
    pub total_loss: f64,
    /// Lookahead probe rows drawn this episode.
    pub probe_rows: usize,
    pub train: Option<TrainMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub env: String,
    pub policy: String,
    pub episodes: usize,
    /// First episode at which the convergence rule held.
    pub convergence_episode: Option<usize>,
    pub node_names: Vec<String>,
    pub final_ledger: Vec<f64>,
    pub final_total: f64,
    pub action_names: Vec<String>,
    /// Executed interventions per action during episodes.
    pub histogram: Vec<usize>,
    pub collider_parent_fraction: f64,
    pub warm_start_interventions: usize,
    pub executed_rows: usize,
    pub probe_rows: usize,
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub interventions: usize,
    pub bc_examples: usize,
    pub bc_nll: Option<f64>,
    pub probe_rows: usize,
}

/// Mutable state of one seeded run.
pub struct Session<'a> {
    env: &'a dyn Environment,
    cfg: &'a RunConfig,
    kind: PolicyKind,
    seed: u64,
    learner: Learner,
    val: ValidationSet,
    history: InterventionHistory,
    grid: Option<ValueGrid>,
    policy: Option<TrainablePolicy>,
    reference: Option<TrainablePolicy>,
    critic: Option<Critic>,
    rollout: Vec<PpoStep>,
    histogram: Vec<usize>,
    ledgers: Vec<Vec<f64>>,
    episode: usize,
    probe_rows: usize,
    warm_start_interventions: usize,
    env_rng: Stream,
    train_rng: Stream,
    proposal_rng: Stream,
    probe_rng: Stream,
    warm_rng: Stream,
}

impl<'a> Session<'a> {
    pub fn new(env: &'a dyn Environment, cfg: &'a RunConfig, kind: PolicyKind, seed: u64) -> Result<Self> {
        if kind == PolicyKind::MaxVariance && env.learner_clamps(0, 0.0).is_none() {
            return Err(Error::PolicyUnsupported {
                policy: kind.to_string(),
                env: env.name().to_string(),
            });
        }
        if cfg.orchestrator.probe.mode == ProbeMode::SelfModel && !env.supports_self_probe() {
            return Err(Error::ProbeModeUnavailable(ProbeMode::SelfModel.as_str().into()));
        }
        let graph = env.graph().clone();
        let learner = Learner::new(graph, cfg.effective_learner(), &mut rng::stream(seed, tags::LEARNER_INIT));
        let mut val_rng = rng::stream(seed, tags::VALIDATION);
        let val = env.validation_set(&mut val_rng)?;
        let range = env.value_range();
        let hist_grid = ValueGrid::new(range, cfg.policy_net.bins);
        let grid = env.has_values().then_some(hist_grid);
        let n_actions = env.n_actions();
        let n_features = feature_len(env.graph().n_nodes(), n_actions);
        let (policy, critic) = if kind.is_trainable() {
            let mut prng = rng::stream(seed, tags::POLICY_INIT);
            let lr = match kind {
                PolicyKind::Ppo => cfg.ppo.lr,
                _ => cfg.dpo.lr,
            };
            let p = TrainablePolicy::new(n_features, n_actions, grid, cfg.policy_net.hidden, lr, &mut prng);
            let c = (kind == PolicyKind::Ppo)
                .then(|| Critic::new(n_features, cfg.policy_net.hidden, cfg.ppo.critic_lr, &mut prng));
            (Some(p), c)
        } else {
            (None, None)
        };
        let mut s = Session {
            env,
            cfg,
            kind,
            seed,
            learner,
            val,
            history: InterventionHistory::new(n_actions, hist_grid),
            grid,
            reference: policy.clone(),
            policy,
            critic,
            rollout: Vec::new(),
            histogram: vec![0; n_actions],
            ledgers: Vec::new(),
            episode: 0,
            probe_rows: 0,
            warm_start_interventions: 0,
            env_rng: rng::stream(seed, tags::ENV),
            train_rng: rng::stream(seed, tags::LEARNER_TRAIN),
            proposal_rng: rng::stream(seed, tags::PROPOSAL),
            probe_rng: rng::stream(seed, tags::PROBE),
            warm_rng: rng::stream(seed, tags::WARM_START),
        };
        s.learner.evaluate(&s.val);
        Ok(s)
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn validation(&self) -> &ValidationSet {
        &self.val
    }

    pub fn policy(&self) -> Option<&TrainablePolicy> {
        self.policy.as_ref()
    }

    pub fn reference(&self) -> Option<&TrainablePolicy> {
        self.reference.as_ref()
    }

    pub fn history(&self) -> &InterventionHistory {
        &self.history
    }

    pub fn ledgers(&self) -> &[Vec<f64>] {
        &self.ledgers
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    fn horizon(&self) -> usize {
        self.cfg
            .fixed_episodes()
            .unwrap_or(self.cfg.orchestrator.convergence.max_episodes)
    }

    fn features(&self, t: usize) -> Result<Vec<f64>> {
        Ok(featurize(self.learner.ledger(), &self.history, t, self.horizon())?.0)
    }

    fn score_all(&mut self, cands: &mut [Candidate]) -> Result<usize> {
        let weights = self.cfg.effective_reward();
        let probe = self.cfg.orchestrator.probe;
        for c in cands.iter_mut() {
            let r = score(
                c.action,
                c.value,
                &self.learner,
                self.env,
                &self.val,
                &self.history,
                &probe,
                weights,
                &mut self.probe_rng,
            )?;
            c.reward = Some(r);
        }
        let rows = cands.len() * probe.rows;
        self.probe_rows += rows;
        Ok(rows)
    }

    fn select(&self, cands: &[Candidate]) -> usize {
        let key = |c: &Candidate| match (c.reward, self.cfg.orchestrator.select_by) {
            (Some(r), SelectBy::Reward) => r.total,
            (Some(r), SelectBy::Gain) => r.info_gain,
            (None, _) => 0.0,
        };
        let mut best = 0;
        for (i, c) in cands.iter().enumerate() {
            if key(c) > key(&cands[best]) {
                best = i;
            }
        }
        best
    }

    fn execute(&mut self, action: usize, value: f64) -> Result<()> {
        let ds = self.env.execute(action, value, self.cfg.learner.n_exec, &mut self.env_rng)?;
        self.learner.observe(&ds);
        self.learner.episode_update(&mut self.train_rng);
        self.learner.evaluate(&self.val);
        self.history.record(action, value);
        Ok(())
    }

    /// Executes `warm_start` uniformly random interventions. For trainable
    /// policies each step also scores `bc_candidates` random grid candidates
    /// and the best one becomes a behaviour-cloning example; the policy is
    /// fitted at the end and the reference reset to it. Executed data and
    /// learner updates do not depend on the policy kind.
    pub fn warm_start(&mut self) -> Result<WarmStartReport> {
        let n = self.cfg.orchestrator.warm_start;
        let mut examples: Vec<(Vec<f64>, usize, Option<usize>)> = Vec::new();
        let mut probe_rows = 0;
        let range = self.env.value_range();
        for _ in 0..n {
            if self.policy.is_some() {
                let f = self.features(0)?;
                let mut cands = propose_random_on_grid(
                    self.env.n_actions(),
                    self.grid,
                    self.cfg.policy_net.bc_candidates,
                    &mut self.proposal_rng,
                );
                probe_rows += self.score_all(&mut cands)?;
                let best = &cands[self.select(&cands)];
                examples.push((f, best.action, best.bin));
            }
            let c = propose_random(self.env.n_actions(), range, 1, &mut self.warm_rng).remove(0);
            let value = if self.env.has_values() { c.value } else { 0.0 };
            self.execute(c.action, value)?;
        }
        self.warm_start_interventions += n;
        let mut bc_nll = None;
        if let Some(p) = self.policy.as_mut() {
            if !examples.is_empty() {
                bc_nll = Some(p.behavior_clone(&examples, self.cfg.policy_net.bc_epochs, self.cfg.policy_net.bc_lr));
            }
            self.reference = Some(p.clone());
        }
        Ok(WarmStartReport {
            interventions: n,
            bc_examples: examples.len(),
            bc_nll,
            probe_rows,
        })
    }

    fn propose(&mut self, f: &[f64], t: usize) -> Result<Vec<Candidate>> {
        let n = self.env.n_actions();
        let range = self.env.value_range();
        let k = self.cfg.orchestrator.k;
        let mut cands = match self.kind {
            PolicyKind::Random => propose_random(n, range, 1, &mut self.proposal_rng),
            PolicyKind::RandomLookahead => propose_random(n, range, k, &mut self.proposal_rng),
            PolicyKind::RoundRobin => vec![propose_round_robin(t, n, &validation_grid(range))],
            PolicyKind::MaxVariance => {
                let env = self.env;
                let grid = max_variance_grid(range, self.cfg.orchestrator.maxvar_grid);
                vec![propose_max_variance(
                    &self.learner,
                    n,
                    &grid,
                    self.cfg.orchestrator.maxvar_passes,
                    |a, v| env.learner_clamps(a, v).unwrap_or_default(),
                    &mut self.proposal_rng,
                )?]
            }
            PolicyKind::Dpo | PolicyKind::Ppo => {
                let p = self.policy.as_ref().expect("trainable policy");
                p.propose(f, k, self.cfg.policy_net.temperature, &mut self.proposal_rng)
            }
        };
        if !self.env.has_values() {
            for c in &mut cands {
                c.value = 0.0;
            }
        }
        Ok(cands)
    }

    /// One full episode of the loop.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let t = self.episode;
        let f = self.features(t)?;
        let mut cands = self.propose(&f, t)?;
        let probe_rows = if self.kind.uses_lookahead() {
            self.score_all(&mut cands)?
        } else {
            0
        };
        let idx = self.select(&cands);
        let (action, value) = (cands[idx].action, cands[idx].value);
        self.execute(action, value)?;
        self.histogram[action] += 1;
        self.episode += 1;
        let episode = self.episode;
        let train = if self.cfg.ablation.no_dpo {
            None
        } else {
            self.train_policy(&f, &cands, idx, episode)?
        };
        self.ledgers.push(self.learner.ledger().to_vec());
        Ok(EpisodeLog {
            episode,
            candidates: cands,
            executed: idx,
            action,
            value,
            ledger: self.learner.ledger().to_vec(),
            total_loss: self.learner.total_loss(),
            probe_rows,
            train,
        })
    }

    fn train_policy(
        &mut self,
        f: &[f64],
        cands: &[Candidate],
        idx: usize,
        episode: usize,
    ) -> Result<Option<TrainMetrics>> {
        match self.kind {
            PolicyKind::Dpo => {
                let pairs = make_preference_pairs(cands, f, self.cfg.dpo.pairs_per_step)?;
                let policy = self.policy.as_mut().expect("dpo policy");
                let reference = self.reference.as_mut().expect("dpo reference");
                let stats = if pairs.is_empty() {
                    None
                } else {
                    Some(dpo_update(policy, reference, &pairs, &self.cfg.dpo)?)
                };
                refresh_reference(policy, reference, episode, self.cfg.dpo.refresh_period);
                Ok(stats.map(TrainMetrics::Dpo))
            }
            PolicyKind::Ppo => {
                let c = &cands[idx];
                self.rollout.push(PpoStep {
                    features: f.to_vec(),
                    action: c.action,
                    bin: c.bin,
                    old_log_prob: c.log_prob,
                    reward: c.total().unwrap_or(0.0),
                });
                if self.rollout.len() < self.cfg.ppo.rollout_episodes {
                    return Ok(None);
                }
                let next = self.features(episode)?;
                let critic = self.critic.as_mut().expect("ppo critic");
                let bootstrap = critic.value(&next);
                let policy = self.policy.as_mut().expect("ppo policy");
                let stats = ppo_update(policy, critic, &self.rollout, bootstrap, &self.cfg.ppo)?;
                self.rollout.clear();
                Ok(Some(TrainMetrics::Ppo(stats)))
            }
            _ => Ok(None),
        }
    }

    /// Summary of the run so far.
    pub fn result(&self) -> RunResult {
        let total: usize = self.histogram.iter().sum();
        let cp: usize = self
            .env
            .collider_parent_actions()
            .iter()
            .map(|&a| self.histogram[a])
            .sum();
        RunResult {
            seed: self.seed,
            env: self.env.name().to_string(),
            policy: self.kind.to_string(),
            episodes: self.episode,
            convergence_episode: convergence_episode(&self.ledgers, &self.cfg.orchestrator.convergence),
            node_names: self.learner.graph().names().to_vec(),
            final_ledger: self.learner.ledger().to_vec(),
            final_total: self.learner.total_loss(),
            action_names: self.env.action_names(),
            histogram: self.histogram.clone(),
            collider_parent_fraction: if total == 0 { 0.0 } else { cp as f64 / total as f64 },
            warm_start_interventions: self.warm_start_interventions,
            executed_rows: (self.warm_start_interventions + total) * self.cfg.learner.n_exec,
            probe_rows: self.probe_rows,
            extra: self.env.extra_metrics(&self.learner),
        }
    }

    /// Runs episodes until convergence (or the cap), or for the fixed budget.
    pub fn run_to_end(&mut self, mut on_episode: impl FnMut(&EpisodeLog)) -> Result<Vec<EpisodeLog>> {
        let fixed = self.cfg.fixed_episodes();
        let cap = self.horizon();
        let mut logs = Vec::new();
        while self.episode < cap {
            let log = self.run_episode()?;
            on_episode(&log);
            logs.push(log);
            if fixed.is_none() && check_convergence(&self.ledgers, &self.cfg.orchestrator.convergence) {
                break;
            }
        }
        Ok(logs)
    }
}

/// Everything produced by one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub result: RunResult,
    pub warm_start: WarmStartReport,
    pub episodes: Vec<EpisodeLog>,
}

/// Warm start plus the main loop for one seed.
pub fn run_single(env: &dyn Environment, cfg: &RunConfig, kind: PolicyKind, seed: u64) -> Result<RunOutput> {
    let mut s = Session::new(env, cfg, kind, seed)?;
    let warm = s.warm_start()?;
    let episodes = s.run_to_end(|_| {})?;
    Ok(RunOutput {
        result: s.result(),
        warm_start: warm,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub policy: String,
    pub seeds: Vec<u64>,
    pub final_totals: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub ci95: Option<(f64, f64)>,
    pub histogram: Vec<usize>,
    pub action_names: Vec<String>,
    pub collider_parent_fraction: f64,
    pub convergence_episodes: Vec<Option<usize>>,
    pub extra_means: BTreeMap<String, f64>,
}

pub fn summarize(results: &[RunResult]) -> RunSummary {
    let totals: Vec<f64> = results.iter().map(|r| r.final_total).collect();
    let n_actions = results.first().map_or(0, |r| r.histogram.len());
    let mut histogram = vec![0; n_actions];
    for r in results {
        for (h, c) in histogram.iter_mut().zip(&r.histogram) {
            *h += c;
        }
    }
    let mut extra_means = BTreeMap::new();
    for r in results {
        for (k, v) in &r.extra {
            *extra_means.entry(k.clone()).or_insert(0.0) += v / results.len() as f64;
        }
    }
    RunSummary {
        env: results.first().map(|r| r.env.clone()).unwrap_or_default(),
        policy: results.first().map(|r| r.policy.clone()).unwrap_or_default(),
        seeds: results.iter().map(|r| r.seed).collect(),
        mean: stats::mean(&totals),
        std: stats::sample_std(&totals),
        median: stats::median(&totals),
        ci95: stats::confidence_interval(&totals, 0.95).ok(),
        final_totals: totals,
        histogram,
        action_names: results.first().map(|r| r.action_names.clone()).unwrap_or_default(),
        collider_parent_fraction: stats::mean(
            &results.iter().map(|r| r.collider_parent_fraction).collect::<Vec<_>>(),
        ),
        convergence_episodes: results.iter().map(|r| r.convergence_episode).collect(),
        extra_means,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub runs: Vec<RunOutput>,
    pub summary: RunSummary,
}

/// Runs every seed (in parallel over `cfg.jobs` threads) and aggregates in
/// seed order.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let kind: PolicyKind = cfg.policy.parse()?;
    let env = build_env(&cfg.env)?;
    let env_ref: &dyn Environment = env.as_ref();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutput> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_single(env_ref, cfg, kind, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let results: Vec<RunResult> = runs.iter().map(|r| r.result.clone()).collect();
    Ok(Experiment {
        summary: summarize(&results),
        runs,
    })
}
