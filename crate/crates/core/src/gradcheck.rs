//! Finite-difference gradient checks for every hand-written backward pass.
//! Used by the `selftest` command.

use rand::Rng;
use serde::Serialize;

use crate::learner::{NodePredictor, RootModel};
use crate::policy::{Candidate, TrainablePolicy, ValueGrid};
use crate::rng::Stream;
use crate::scm::ValueRange;
use crate::trainers::{dpo_loss, ppo_loss, PpoStep, PreferencePair};

pub const STEP: f64 = 1e-5;

/// Central differences of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all components.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Denominator floor for [`max_relative_error`] in the checks below.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn random_vec(n: usize, scale: f64, rng: &mut Stream) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn check_node_predictor(instances: usize, rng: &mut Stream) -> GradCheck {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n_in = rng.random_range(1..=4);
        let hidden = rng.random_range(2..=12);
        let m = rng.random_range(1..=8);
        let net = NodePredictor::new(n_in, hidden, 0.0, 1e-3, rng);
        let x = random_vec(n_in * m, 2.0, rng);
        let y = random_vec(m, 2.0, rng);
        let (_, g) = net.mse_and_grad(&x, &y);
        let num = central_difference(net.params(), STEP, |p| {
            let mut c = net.clone();
            c.params_mut().copy_from_slice(p);
            c.mse_and_grad(&x, &y).0
        });
        worst = worst.max(max_relative_error(&g, &num, REL_FLOOR));
    }
    GradCheck {
        name: "node_predictor_mse",
        instances,
        max_rel_error: worst,
    }
}

pub fn check_root_nll(instances: usize, rng: &mut Stream) -> GradCheck {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let mut root = RootModel::new(1e-3);
        root.params_mut()[0] = rng.random_range(-2.0..2.0);
        root.params_mut()[1] = rng.random_range(-1.0..1.0);
        let n = rng.random_range(1..=20);
        let xs = random_vec(n, 3.0, rng);
        let (_, g) = root.nll_and_grad(&xs);
        let num = central_difference(root.params(), STEP, |p| {
            let mut r = root.clone();
            r.params_mut().copy_from_slice(p);
            r.nll_and_grad(&xs).0
        });
        worst = worst.max(max_relative_error(&g, &num, REL_FLOOR));
    }
    GradCheck {
        name: "root_nll",
        instances,
        max_rel_error: worst,
    }
}

fn random_policy(rng: &mut Stream) -> (TrainablePolicy, usize) {
    let n_actions = rng.random_range(2..=5);
    let n_features = rng.random_range(2..=8);
    let grid = rng
        .random_bool(0.8)
        .then(|| ValueGrid::new(ValueRange { lo: -5.0, hi: 5.0 }, rng.random_range(3..=11)));
    let p = TrainablePolicy::new(n_features, n_actions, grid, rng.random_range(2..=10), 1e-3, rng);
    (p, n_features)
}

fn random_candidate(policy: &TrainablePolicy, rng: &mut Stream) -> Candidate {
    let action = rng.random_range(0..policy.n_actions());
    let (bin, value) = match policy.grid() {
        Some(g) => {
            let b = rng.random_range(0..g.bins);
            (Some(b), g.center(b))
        }
        None => (None, 0.0),
    };
    Candidate {
        action,
        value,
        bin,
        log_prob: 0.0,
        reward: None,
    }
}

fn with_params(p: &TrainablePolicy, params: &[f64]) -> TrainablePolicy {
    let mut c = p.clone();
    c.params_mut().copy_from_slice(params);
    c
}

pub fn check_policy_log_prob(instances: usize, rng: &mut Stream) -> GradCheck {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (policy, nf) = random_policy(rng);
        let f = random_vec(nf, 1.0, rng);
        let c = random_candidate(&policy, rng);
        let mut g = vec![0.0; policy.params().len()];
        policy.log_prob_grad(&f, c.action, c.bin, 1.0, &mut g);
        let num = central_difference(policy.params(), STEP, |p| {
            with_params(&policy, p).log_prob_idx(&f, c.action, c.bin)
        });
        worst = worst.max(max_relative_error(&g, &num, REL_FLOOR));
    }
    GradCheck {
        name: "policy_log_prob",
        instances,
        max_rel_error: worst,
    }
}

pub fn check_dpo_loss(instances: usize, rng: &mut Stream) -> GradCheck {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (policy, nf) = random_policy(rng);
        let mut reference = policy.clone();
        for v in reference.params_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        let pair = PreferencePair {
            features: random_vec(nf, 1.0, rng),
            winner: random_candidate(&policy, rng),
            loser: random_candidate(&policy, rng),
        };
        let beta = rng.random_range(0.05..2.0);
        let (_, g) = dpo_loss(&policy, &reference, &pair, beta).expect("on-grid candidates");
        let num = central_difference(policy.params(), STEP, |p| {
            dpo_loss(&with_params(&policy, p), &reference, &pair, beta)
                .expect("on-grid candidates")
                .0
        });
        worst = worst.max(max_relative_error(&g, &num, REL_FLOOR));
    }
    GradCheck {
        name: "dpo_loss",
        instances,
        max_rel_error: worst,
    }
}

pub fn check_ppo_surrogate(instances: usize, rng: &mut Stream) -> GradCheck {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (policy, nf) = random_policy(rng);
        let n = rng.random_range(1..=6);
        let mut steps = Vec::with_capacity(n);
        for _ in 0..n {
            let features = random_vec(nf, 1.0, rng);
            let c = random_candidate(&policy, rng);
            let lp = policy.log_prob_idx(&features, c.action, c.bin);
            // keep ratios away from the clip boundaries, where the loss has a kink
            let offset = if rng.random_bool(0.5) {
                rng.random_range(-0.1..0.1)
            } else {
                rng.random_range(0.4..0.8) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
            };
            steps.push(PpoStep {
                features,
                action: c.action,
                bin: c.bin,
                old_log_prob: lp + offset,
                reward: 0.0,
            });
        }
        let adv = random_vec(n, 2.0, rng);
        let coef = rng.random_range(0.0..0.1);
        let (_, g) = ppo_loss(&policy, &steps, &adv, 0.2, coef).expect("matching lengths");
        let num = central_difference(policy.params(), STEP, |p| {
            ppo_loss(&with_params(&policy, p), &steps, &adv, 0.2, coef)
                .expect("matching lengths")
                .0
                .total
        });
        worst = worst.max(max_relative_error(&g, &num, REL_FLOOR));
    }
    GradCheck {
        name: "ppo_surrogate",
        instances,
        max_rel_error: worst,
    }
}

/// All checks with `instances` random instances each.
pub fn run_all(instances: usize, rng: &mut Stream) -> Vec<GradCheck> {
    vec![
        check_node_predictor(instances, rng),
        check_root_nll(instances, rng),
        check_policy_log_prob(instances, rng),
        check_dpo_loss(instances, rng),
        check_ppo_surrogate(instances, rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], STEP, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn all_checks_pass() {
        let mut rng = crate::rng::from_seed(3);
        for c in run_all(20, &mut rng) {
            assert!(c.passed(1e-4), "{} max rel error {}", c.name, c.max_rel_error);
        }
    }
}
