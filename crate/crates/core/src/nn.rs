//! Small dense-network primitives with hand-written backward passes.
//!
//! Weights live in flat `f64` buffers; a dense layer with `n_in` inputs and
//! `n_out` outputs stores its weight matrix row-major (`n_out x n_in`).

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }
}

/// Fills `out` with U(-1/sqrt(fan_in), 1/sqrt(fan_in)); a zero fan-in uses bound 1.
pub fn init_uniform<R: Rng + ?Sized>(out: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for w in out {
        *w = rng.random_range(-bound..bound);
    }
}

/// `out = W x + b`
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * n_in..(j + 1) * n_in];
        *o = b[j] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// Accumulates weight/bias gradients of a dense layer and optionally the
/// input gradient (overwritten, not accumulated).
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    g_out: &[f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
    g_x: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (j, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        g_b[j] += g;
        let row = &mut g_w[j * n_in..(j + 1) * n_in];
        for (gw, xi) in row.iter_mut().zip(x) {
            *gw += g * xi;
        }
    }
    if let Some(g_x) = g_x {
        for (i, gx) in g_x.iter_mut().enumerate() {
            *gx = g_out
                .iter()
                .enumerate()
                .map(|(j, g)| g * w[j * n_in + i])
                .sum();
        }
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
