//! Run-level statistics: paired t-tests, Bonferroni correction, t-based
//! confidence intervals and effect sizes.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("paired samples need equal lengths >= 2 (got {0} and {1})")]
    BadLengths(usize, usize),
    #[error("differences have zero variance; t statistic undefined")]
    DegenerateVariance,
    #[error("need at least {0} values")]
    TooFew(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p value.
    pub p_two_sided: f64,
}

impl TTest {
    /// One-sided p value for the alternative `mean(a - b) < 0`.
    pub fn p_less(&self) -> f64 {
        students_t_cdf(self.t, self.df)
    }

    /// One-sided p value for the alternative `mean(a - b) > 0`.
    pub fn p_greater(&self) -> f64 {
        1.0 - students_t_cdf(self.t, self.df)
    }
}

fn students_t_cdf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .cdf(t)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(StatsError::BadLengths(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = sample_std(&d);
    if !(s > 0.0) {
        return Err(StatsError::DegenerateVariance);
    }
    let n = d.len() as f64;
    let t = mean(&d) / (s / n.sqrt());
    let df = n - 1.0;
    let p = 2.0 * (1.0 - students_t_cdf(t.abs(), df));
    Ok(TTest {
        t,
        df,
        p_two_sided: p.min(1.0),
    })
}

/// Bonferroni-adjusted p value, capped at 1.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// Per-comparison significance threshold `alpha / m`.
pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m as f64
}

/// `mean +- t_{(1+level)/2, n-1} * s / sqrt(n)`.
pub fn confidence_interval(xs: &[f64], level: f64) -> Result<(f64, f64), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFew(2));
    }
    let n = xs.len() as f64;
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("df > 0")
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * sample_std(xs) / n.sqrt();
    let m = mean(xs);
    Ok((m - half, m + half))
}

/// Effect size of `baseline` over `method`: `(mean_b - mean_m) / s_pooled`
/// with `s_pooled = sqrt((s_b^2 + s_m^2) / 2)`. A zero pooled spread yields
/// `+-inf` (or 0 when the means coincide).
pub fn cohens_d(baseline: &[f64], method: &[f64]) -> f64 {
    let diff = mean(baseline) - mean(method);
    let pooled = ((sample_std(baseline).powi(2) + sample_std(method).powi(2)) / 2.0).sqrt();
    if pooled == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / pooled
    }
}

/// `100 (baseline - method) / baseline`.
pub fn improvement_pct(baseline: f64, method: f64) -> f64 {
    100.0 * (baseline - method) / baseline
}

/// Formats a float, spelling infinities as `inf` / `-inf`.
pub fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}
