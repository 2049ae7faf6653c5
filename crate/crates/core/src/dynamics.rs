//! Chain of coupled Duffing oscillators integrated with fixed-step RK4.
//!
//! Oscillator `i` obeys
//! `x_i'' + delta x_i' + alpha x_i + beta x_i^3 = F_i(t) + k (x_{i-1} - x_i) + k (x_{i+1} - x_i)`
//! with the boundary oscillators coupled to their single neighbour. A clamp
//! pins one oscillator at a fixed position with zero velocity.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Provenance};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("clamp index {index} out of range for {n_osc} oscillators")]
    ClampOutOfRange { index: usize, n_osc: usize },
    #[error("need horizon >= stride >= 1, got horizon {horizon}, stride {stride}")]
    BadHorizon { horizon: usize, stride: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuffingParams {
    /// Damping, 1/time.
    pub delta: f64,
    /// Linear stiffness, 1/time^2.
    pub alpha_lin: f64,
    /// Cubic stiffness, 1/(time^2 length^2).
    pub beta_cubic: f64,
    /// Neighbour spring constant, 1/time^2.
    pub coupling: f64,
    /// Forcing amplitude per oscillator (length/time^2); empty means unforced.
    pub forcing_amp: Vec<f64>,
    /// Forcing angular frequency per oscillator (1/time).
    pub forcing_freq: Vec<f64>,
    pub n_osc: usize,
    pub dt: f64,
    /// Steps discarded before the first snapshot.
    pub burn_in: usize,
    /// Integration steps between snapshots.
    pub stride: usize,
}

impl Default for DuffingParams {
    fn default() -> Self {
        DuffingParams {
            delta: 0.2,
            alpha_lin: 1.0,
            beta_cubic: 0.5,
            coupling: 0.5,
            forcing_amp: vec![0.0, 1.0, 0.0],
            forcing_freq: vec![1.2; 3],
            n_osc: 3,
            dt: 0.01,
            burn_in: 500,
            stride: 10,
        }
    }
}

impl DuffingParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: &str| Err(DynamicsError::InvalidParams(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.n_osc < 2 {
            return bad("need at least two oscillators");
        }
        if !(self.coupling >= 0.0) {
            return bad("coupling must be non-negative");
        }
        if !self.forcing_amp.is_empty() && self.forcing_amp.len() != self.n_osc {
            return bad("forcing_amp must be empty or have one entry per oscillator");
        }
        if self.forcing_freq.len() != self.forcing_amp.len() {
            return bad("forcing_freq must match forcing_amp");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        Ok(())
    }

    /// Same parameters with all external forcing removed.
    pub fn unforced(mut self) -> Self {
        self.forcing_amp.clear();
        self.forcing_freq.clear();
        self
    }

    pub fn is_forced(&self, i: usize) -> bool {
        self.forcing_amp.get(i).is_some_and(|&a| a != 0.0)
    }

    fn forcing(&self, i: usize, t: f64) -> f64 {
        if self.forcing_amp.is_empty() {
            0.0
        } else {
            self.forcing_amp[i] * (self.forcing_freq[i] * t).cos()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl OscState {
    pub fn at_rest(n: usize) -> Self {
        OscState {
            x: vec![0.0; n],
            v: vec![0.0; n],
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.v).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub index: usize,
    pub value: f64,
}

fn accel_into(x: &[f64], v: &[f64], t: f64, p: &DuffingParams, clamp: Option<Clamp>, out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        if clamp.is_some_and(|c| c.index == i) {
            out[i] = 0.0;
            continue;
        }
        let xi = x[i];
        let mut a = p.forcing(i, t) - p.delta * v[i] - p.alpha_lin * xi - p.beta_cubic * xi * xi * xi;
        if i > 0 {
            a += p.coupling * (x[i - 1] - xi);
        }
        if i + 1 < n {
            a += p.coupling * (x[i + 1] - xi);
        }
        out[i] = a;
    }
}

/// Per-oscillator accelerations; a clamped oscillator reports zero.
pub fn acceleration(state: &OscState, params: &DuffingParams, clamp: Option<Clamp>) -> Vec<f64> {
    let mut out = vec![0.0; state.x.len()];
    accel_into(&state.x, &state.v, state.t, params, clamp, &mut out);
    out
}

fn apply_clamp(state: &mut OscState, clamp: Option<Clamp>) {
    if let Some(c) = clamp {
        state.x[c.index] = c.value;
        state.v[c.index] = 0.0;
    }
}

/// One classical RK4 step of size `params.dt`.
pub fn rk4_step(state: &OscState, params: &DuffingParams, clamp: Option<Clamp>) -> Result<OscState, DynamicsError> {
    let n = state.x.len();
    let h = params.dt;
    let mut s = state.clone();
    apply_clamp(&mut s, clamp);
    let deriv = |x: &[f64], v: &[f64], t: f64, dx: &mut [f64], dv: &mut [f64]| {
        dx.copy_from_slice(v);
        if let Some(c) = clamp {
            dx[c.index] = 0.0;
        }
        accel_into(x, v, t, params, clamp, dv);
    };
    let mut k1x = vec![0.0; n];
    let mut k1v = vec![0.0; n];
    let mut k2x = vec![0.0; n];
    let mut k2v = vec![0.0; n];
    let mut k3x = vec![0.0; n];
    let mut k3v = vec![0.0; n];
    let mut k4x = vec![0.0; n];
    let mut k4v = vec![0.0; n];
    let mut tx = vec![0.0; n];
    let mut tv = vec![0.0; n];

    deriv(&s.x, &s.v, s.t, &mut k1x, &mut k1v);
    for i in 0..n {
        tx[i] = s.x[i] + 0.5 * h * k1x[i];
        tv[i] = s.v[i] + 0.5 * h * k1v[i];
    }
    deriv(&tx, &tv, s.t + 0.5 * h, &mut k2x, &mut k2v);
    for i in 0..n {
        tx[i] = s.x[i] + 0.5 * h * k2x[i];
        tv[i] = s.v[i] + 0.5 * h * k2v[i];
    }
    deriv(&tx, &tv, s.t + 0.5 * h, &mut k3x, &mut k3v);
    for i in 0..n {
        tx[i] = s.x[i] + h * k3x[i];
        tv[i] = s.v[i] + h * k3v[i];
    }
    deriv(&tx, &tv, s.t + h, &mut k4x, &mut k4v);
    for i in 0..n {
        s.x[i] += h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        s.v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
    }
    s.t += h;
    apply_clamp(&mut s, clamp);
    if !s.is_finite() {
        return Err(DynamicsError::NonFiniteState(s.t));
    }
    Ok(s)
}

/// Energy of an uncoupled, unforced, undamped oscillator: v^2/2 + alpha x^2/2 + beta x^4/4.
pub fn oscillator_energy(x: f64, v: f64, params: &DuffingParams) -> f64 {
    0.5 * v * v + 0.5 * params.alpha_lin * x * x + 0.25 * params.beta_cubic * x.powi(4)
}

/// Position snapshots with their times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major: one entry per snapshot, one position per oscillator.
    pub positions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DynamicsError> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.positions.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.positions) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initial conditions: positions U(-1,1), velocities U(-0.5,0.5).
pub fn random_initial_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> OscState {
    let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    OscState { x, v, t: 0.0 }
}

/// Integrates from random initial conditions, discards `params.burn_in`
/// steps, then records a snapshot every `stride` steps for `horizon` steps.
pub fn simulate<R: Rng + ?Sized>(
    params: &DuffingParams,
    clamp: Option<Clamp>,
    horizon: usize,
    stride: usize,
    rng: &mut R,
) -> Result<Trajectory, DynamicsError> {
    params.validate()?;
    if stride == 0 || horizon < stride {
        return Err(DynamicsError::BadHorizon { horizon, stride });
    }
    if let Some(c) = clamp {
        if c.index >= params.n_osc {
            return Err(DynamicsError::ClampOutOfRange {
                index: c.index,
                n_osc: params.n_osc,
            });
        }
    }
    let mut state = random_initial_state(params.n_osc, rng);
    apply_clamp(&mut state, clamp);
    for _ in 0..params.burn_in {
        state = rk4_step(&state, params, clamp)?;
    }
    let n_snap = horizon / stride;
    let mut times = Vec::with_capacity(n_snap);
    let mut positions = Vec::with_capacity(n_snap);
    for _ in 0..n_snap {
        for _ in 0..stride {
            state = rk4_step(&state, params, clamp)?;
        }
        times.push(state.t);
        positions.push(state.x.clone());
    }
    Ok(Trajectory { times, positions })
}

/// Snapshot positions as a dataset with one column per oscillator.
pub fn sample_trajectory<R: Rng + ?Sized>(
    params: &DuffingParams,
    clamp: Option<Clamp>,
    horizon: usize,
    stride: usize,
    rng: &mut R,
) -> Result<Dataset, DynamicsError> {
    let traj = simulate(params, clamp, horizon, stride, rng)?;
    let names = (1..=params.n_osc).map(|i| format!("x{i}")).collect();
    let (prov, clamped) = match clamp {
        Some(c) => (
            Provenance::Clamp {
                oscillator: c.index,
                value: c.value,
            },
            vec![c.index],
        ),
        None => (Provenance::Observational, vec![]),
    };
    Dataset::from_rows(names, &traj.positions, prov, clamped)
        .map_err(|e| DynamicsError::InvalidParams(e.to_string()))
}

pub fn coupling_error(estimated_k: f64, true_k: f64) -> f64 {
    (estimated_k - true_k).abs()
}

/// Pearson correlation of two equally long slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// One snapshot triple `(x(t-h), x(t), x(t+h))` for the whole chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotTriple<'a> {
    pub prev: &'a [f64],
    pub cur: &'a [f64],
    pub next: &'a [f64],
    pub clamped: Option<usize>,
}

/// Least-squares readout of the coupling constant from snapshot triples.
///
/// For every oscillator that is neither clamped nor listed in `skip`, the
/// second difference
/// `(x(t+h) - 2 x(t) + x(t-h)) / h^2` is regressed on
/// `[x, x^3, (x(t+h) - x(t-h)) / 2h, sum_j (x_j - x)]` (neighbours `j`); the
/// last coefficient is the coupling estimate. Returns `None` when the normal
/// equations are singular.
pub fn estimate_coupling(triples: &[SnapshotTriple<'_>], h: f64, skip: &[usize]) -> Option<f64> {
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for tr in triples {
        let n = tr.cur.len();
        for i in 0..n {
            if tr.clamped == Some(i) || skip.contains(&i) {
                continue;
            }
            let x = tr.cur[i];
            let acc = (tr.next[i] - 2.0 * x + tr.prev[i]) / (h * h);
            let vel = (tr.next[i] - tr.prev[i]) / (2.0 * h);
            let mut diff = 0.0;
            if i > 0 {
                diff += tr.cur[i - 1] - x;
            }
            if i + 1 < n {
                diff += tr.cur[i + 1] - x;
            }
            let f = [x, x * x * x, vel, diff];
            for r in 0..4 {
                atb[r] += f[r] * acc;
                for c in 0..4 {
                    ata[r][c] += f[r] * f[c];
                }
            }
        }
    }
    solve4(ata, atb).map(|beta| beta[3])
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn harmonic() -> DuffingParams {
        DuffingParams {
            delta: 0.0,
            alpha_lin: 1.0,
            beta_cubic: 0.0,
            coupling: 0.0,
            n_osc: 2,
            ..DuffingParams::default().unforced()
        }
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        let p = DuffingParams::default().unforced();
        assert_eq!(acceleration(&OscState::at_rest(3), &p, None), vec![0.0; 3]);
    }

    #[test]
    fn coupling_formula() {
        let p = DuffingParams {
            alpha_lin: 1.0,
            beta_cubic: 0.0,
            delta: 0.0,
            coupling: 0.5,
            ..DuffingParams::default().unforced()
        };
        let s = OscState {
            x: vec![1.0, 0.0, 0.0],
            v: vec![0.0; 3],
            t: 0.0,
        };
        assert_eq!(acceleration(&s, &p, None), vec![-1.5, 0.5, 0.0]);
        let s = OscState {
            x: vec![1.0, 0.0, 1.0],
            v: vec![0.0; 3],
            t: 0.0,
        };
        let a = acceleration(&s, &p, Some(Clamp { index: 1, value: 0.0 }));
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn harmonic_limit_matches_cosine() {
        let p = harmonic();
        let mut s = OscState {
            x: vec![1.0, 0.0],
            v: vec![0.0, 0.0],
            t: 0.0,
        };
        for _ in 0..1000 {
            s = rk4_step(&s, &p, None).unwrap();
        }
        assert!((s.x[0] - 10f64.cos()).abs() < 1e-6);
    }

    #[test]
    fn clamp_is_exact() {
        let p = DuffingParams::default().unforced();
        let mut r = rng::from_seed(5);
        let ds = sample_trajectory(&p, Some(Clamp { index: 1, value: 2.0 }), 2000, 10, &mut r).unwrap();
        assert!(ds.column(1).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn blow_up_detected() {
        let p = DuffingParams {
            beta_cubic: -50.0,
            delta: 0.0,
            dt: 0.5,
            ..DuffingParams::default().unforced()
        };
        let mut s = OscState {
            x: vec![3.0, 0.0, 0.0],
            v: vec![0.0; 3],
            t: 0.0,
        };
        let mut err = None;
        for _ in 0..200 {
            match rk4_step(&s, &p, None) {
                Ok(n) => s = n,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(DynamicsError::NonFiniteState(_))));
    }

    #[test]
    fn coupling_error_values() {
        assert_eq!(coupling_error(0.5, 0.5), 0.0);
        assert!((coupling_error(0.542, 0.5) - 0.042).abs() < 1e-12);
        assert!((coupling_error(0.3, 0.5) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_params() {
        let p = DuffingParams {
            n_osc: 1,
            ..DuffingParams::default().unforced()
        };
        assert!(p.validate().is_err());
        let p = DuffingParams {
            dt: 0.0,
            ..DuffingParams::default().unforced()
        };
        assert!(p.validate().is_err());
    }
}
