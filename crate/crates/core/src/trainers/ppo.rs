//! Actor-critic baseline: generalized advantage estimation, clipped
//! surrogate with an entropy bonus, and a separate value network.

use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::learner::NodePredictor;
use crate::policy::TrainablePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lambda: f64,
    pub clip: f64,
    pub discount: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub lr: f64,
    pub critic_lr: f64,
    /// Episodes collected per update.
    pub rollout_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lambda: 0.95,
            clip: 0.2,
            discount: 0.99,
            entropy_coef: 0.01,
            epochs: 4,
            lr: 3e-4,
            critic_lr: 1e-3,
            rollout_episodes: 8,
        }
    }
}

/// One executed step of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoStep {
    pub features: Vec<f64>,
    pub action: usize,
    pub bin: Option<usize>,
    pub old_log_prob: f64,
    pub reward: f64,
}

/// Advantages and returns. `values` holds one entry per step plus the
/// bootstrap value of the state after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    lambda: f64,
    discount: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainerError> {
    if values.len() != rewards.len() + 1 {
        return Err(TrainerError::LengthMismatch(format!(
            "{} rewards need {} values (including bootstrap), got {}",
            rewards.len(),
            rewards.len() + 1,
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + discount * values[t + 1] - values[t];
        acc = delta + discount * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// State-value network over policy features.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    net: NodePredictor,
}

impl Critic {
    pub fn new<R: rand::Rng + ?Sized>(n_features: usize, hidden: usize, lr: f64, rng: &mut R) -> Self {
        Critic {
            net: NodePredictor::new(n_features, hidden, 0.0, lr, rng),
        }
    }

    pub fn value(&self, f: &[f64]) -> f64 {
        self.net.predict(f)
    }

    /// One Adam step on the mean squared error to `targets`; returns the
    /// pre-step loss.
    pub fn fit_step(&mut self, features: &[Vec<f64>], targets: &[f64]) -> f64 {
        let inputs: Vec<f64> = features.iter().flatten().copied().collect();
        let (loss, g) = self.net.mse_and_grad(&inputs, targets);
        self.net.apply_grad(&g);
        loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    /// `-mean(min(r A, clip(r) A))`
    pub surrogate: f64,
    /// Mean policy entropy.
    pub entropy: f64,
    /// `surrogate - entropy_coef * entropy`
    pub total: f64,
}

/// Clipped-surrogate loss with entropy bonus and its policy gradient.
pub fn ppo_loss(
    policy: &TrainablePolicy,
    steps: &[PpoStep],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Result<(PpoLoss, Vec<f64>), TrainerError> {
    if steps.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    if steps.len() != advantages.len() {
        return Err(TrainerError::LengthMismatch(format!(
            "{} steps, {} advantages",
            steps.len(),
            advantages.len()
        )));
    }
    let m = steps.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut surrogate = 0.0;
    let mut entropy = 0.0;
    for (s, &a) in steps.iter().zip(advantages) {
        let lp = policy.log_prob_idx(&s.features, s.action, s.bin);
        let r = (lp - s.old_log_prob).exp();
        let clipped = r.clamp(1.0 - clip, 1.0 + clip);
        surrogate -= (r * a).min(clipped * a) / m;
        let unclipped_active = if a >= 0.0 { r <= 1.0 + clip } else { r >= 1.0 - clip };
        if unclipped_active && a != 0.0 {
            policy.log_prob_grad(&s.features, s.action, s.bin, -a * r / m, &mut grad);
        }
        if entropy_coef != 0.0 {
            entropy += policy.entropy_grad(&s.features, -entropy_coef / m, &mut grad) / m;
        } else {
            entropy += policy.entropy_grad(&s.features, 0.0, &mut grad) / m;
        }
    }
    Ok((
        PpoLoss {
            surrogate,
            entropy,
            total: surrogate - entropy_coef * entropy,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub loss: PpoLoss,
    pub critic_loss: f64,
    pub mean_advantage: f64,
}

/// `cfg.epochs` policy and critic steps on one rollout. `bootstrap` is the
/// critic's value of the state after the last step.
pub fn ppo_update(
    policy: &mut TrainablePolicy,
    critic: &mut Critic,
    steps: &[PpoStep],
    bootstrap: f64,
    cfg: &PpoConfig,
) -> Result<PpoStats, TrainerError> {
    if steps.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let mut values: Vec<f64> = steps.iter().map(|s| critic.value(&s.features)).collect();
    values.push(bootstrap);
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let (adv, returns) = compute_gae(&rewards, &values, cfg.lambda, cfg.discount)?;
    let features: Vec<Vec<f64>> = steps.iter().map(|s| s.features.clone()).collect();
    policy.set_lr(cfg.lr);
    let mut first = None;
    let mut critic_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let (loss, grad) = ppo_loss(policy, steps, &adv, cfg.clip, cfg.entropy_coef)?;
        if epoch == 0 {
            first = Some(loss);
        }
        policy.apply_grad(&grad);
        let c = critic.fit_step(&features, &returns);
        if epoch == 0 {
            critic_loss = c;
        }
    }
    let loss = match first {
        Some(l) => l,
        None => ppo_loss(policy, steps, &adv, cfg.clip, cfg.entropy_coef)?.0,
    };
    Ok(PpoStats {
        loss,
        critic_loss,
        mean_advantage: adv.iter().sum::<f64>() / adv.len() as f64,
    })
}
