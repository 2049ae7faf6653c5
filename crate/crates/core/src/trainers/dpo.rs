//! Direct preference optimization against a periodically refreshed frozen
//! reference policy.

use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::nn;
use crate::policy::{Candidate, TrainablePolicy};

/// Rewards closer than this form no pair.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairsPerStep {
    /// Best versus worst candidate only.
    One,
    /// Every ordered pair with distinct rewards.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    /// Reference refresh period in episodes.
    pub refresh_period: usize,
    pub pairs_per_step: PairsPerStep,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            lr: 1e-5,
            refresh_period: 25,
            pairs_per_step: PairsPerStep::One,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub features: Vec<f64>,
    pub winner: Candidate,
    pub loser: Candidate,
}

fn rewards(cands: &[Candidate]) -> Result<Vec<f64>, TrainerError> {
    if cands.len() < 2 {
        return Err(TrainerError::TooFewCandidates(2));
    }
    cands
        .iter()
        .enumerate()
        .map(|(i, c)| c.total().ok_or(TrainerError::UnscoredCandidate(i)))
        .collect()
}

/// Indices `(argmax, argmin)` of total reward; first occurrence wins ties.
/// `None` when the spread is below [`TIE_EPS`].
pub fn best_worst(totals: &[f64]) -> Option<(usize, usize)> {
    let mut hi = 0;
    let mut lo = 0;
    for (i, &r) in totals.iter().enumerate() {
        if r > totals[hi] {
            hi = i;
        }
        if r < totals[lo] {
            lo = i;
        }
    }
    (totals[hi] - totals[lo] >= TIE_EPS).then_some((hi, lo))
}

/// Best-versus-worst pair of a scored candidate set.
pub fn make_preference_pair(cands: &[Candidate], features: &[f64]) -> Result<Option<PreferencePair>, TrainerError> {
    let totals = rewards(cands)?;
    Ok(best_worst(&totals).map(|(w, l)| PreferencePair {
        features: features.to_vec(),
        winner: cands[w].clone(),
        loser: cands[l].clone(),
    }))
}

/// Pairs according to `mode`.
pub fn make_preference_pairs(
    cands: &[Candidate],
    features: &[f64],
    mode: PairsPerStep,
) -> Result<Vec<PreferencePair>, TrainerError> {
    match mode {
        PairsPerStep::One => Ok(make_preference_pair(cands, features)?.into_iter().collect()),
        PairsPerStep::All => {
            let totals = rewards(cands)?;
            let mut out = Vec::new();
            for i in 0..cands.len() {
                for j in 0..cands.len() {
                    if totals[i] - totals[j] >= TIE_EPS {
                        out.push(PreferencePair {
                            features: features.to_vec(),
                            winner: cands[i].clone(),
                            loser: cands[j].clone(),
                        });
                    }
                }
            }
            Ok(out)
        }
    }
}

/// `-log sigmoid(beta [(lp_w - ref_w) - (lp_l - ref_l)])`.
pub fn dpo_objective(lp_w: f64, ref_w: f64, lp_l: f64, ref_l: f64, beta: f64) -> f64 {
    -nn::log_sigmoid(beta * ((lp_w - ref_w) - (lp_l - ref_l)))
}

/// Loss of one pair and its gradient with respect to the policy only.
pub fn dpo_loss(
    policy: &TrainablePolicy,
    reference: &TrainablePolicy,
    pair: &PreferencePair,
    beta: f64,
) -> Result<(f64, Vec<f64>), TrainerError> {
    let mut grad = vec![0.0; policy.params().len()];
    let loss = dpo_loss_into(policy, reference, pair, beta, 1.0, &mut grad)?;
    Ok((loss, grad))
}

fn dpo_loss_into(
    policy: &TrainablePolicy,
    reference: &TrainablePolicy,
    pair: &PreferencePair,
    beta: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, TrainerError> {
    let f = &pair.features;
    let ref_w = reference.candidate_log_prob(f, &pair.winner)?;
    let ref_l = reference.candidate_log_prob(f, &pair.loser)?;
    let lp_w = policy.candidate_log_prob(f, &pair.winner)?;
    let lp_l = policy.candidate_log_prob(f, &pair.loser)?;
    let z = beta * ((lp_w - ref_w) - (lp_l - ref_l));
    // d/dz of -log sigmoid(z) is -sigmoid(-z)
    let dz = -nn::sigmoid(-z) * beta * scale;
    let bin = |c: &Candidate| policy.grid().map(|g| g.nearest(c.value));
    policy.log_prob_grad(f, pair.winner.action, bin(&pair.winner), dz, grad);
    policy.log_prob_grad(f, pair.loser.action, bin(&pair.loser), -dz, grad);
    Ok(-nn::log_sigmoid(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoStats {
    /// Mean pair loss before the step.
    pub loss: f64,
    /// Mean implicit margin `beta * (winner log-ratio - loser log-ratio)` before the step.
    pub margin: f64,
    pub pairs: usize,
}

/// Mean implicit margin over a batch.
pub fn mean_margin(
    policy: &TrainablePolicy,
    reference: &TrainablePolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64, TrainerError> {
    let mut sum = 0.0;
    for p in pairs {
        let f = &p.features;
        let lw = policy.candidate_log_prob(f, &p.winner)? - reference.candidate_log_prob(f, &p.winner)?;
        let ll = policy.candidate_log_prob(f, &p.loser)? - reference.candidate_log_prob(f, &p.loser)?;
        sum += beta * (lw - ll);
    }
    Ok(sum / pairs.len() as f64)
}

/// One Adam step on the mean pair loss at the policy's configured rate.
pub fn dpo_update(
    policy: &mut TrainablePolicy,
    reference: &TrainablePolicy,
    pairs: &[PreferencePair],
    cfg: &DpoConfig,
) -> Result<DpoStats, TrainerError> {
    if pairs.is_empty() {
        return Err(TrainerError::EmptyBatch);
    }
    let m = pairs.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut loss = 0.0;
    for p in pairs {
        loss += dpo_loss_into(policy, reference, p, cfg.beta, 1.0 / m, &mut grad)? / m;
    }
    let margin = mean_margin(policy, reference, pairs, cfg.beta)?;
    policy.set_lr(cfg.lr);
    policy.apply_grad(&grad);
    Ok(DpoStats {
        loss,
        margin,
        pairs: pairs.len(),
    })
}

/// Replaces `reference` with a copy of `policy` when `episode` is a positive
/// multiple of `period`. Returns whether it did.
pub fn refresh_reference(
    policy: &TrainablePolicy,
    reference: &mut TrainablePolicy,
    episode: usize,
    period: usize,
) -> bool {
    assert!(period >= 1, "refresh period must be >= 1");
    if episode > 0 && episode % period == 0 {
        *reference = policy.clone();
        true
    } else {
        false
    }
}
