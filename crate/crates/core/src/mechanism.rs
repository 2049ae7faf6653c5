//! Closed-form structural mechanisms.

use serde::{Deserialize, Serialize};

/// One additive term of an analytic mechanism. `parent` is a slot in the
/// node's (index-sorted) parent list, not a graph node index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Term {
    /// `weight * parent`
    Weighted { parent: usize, weight: f64 },
    /// `weight * sin(parent)`
    Sine { parent: usize, weight: f64 },
    /// `weight * parent^2`
    Square { parent: usize, weight: f64 },
}

impl Term {
    pub fn parent(&self) -> usize {
        match *self {
            Term::Weighted { parent, .. } | Term::Sine { parent, .. } | Term::Square { parent, .. } => {
                parent
            }
        }
    }

    fn eval(&self, parents: &[f64]) -> f64 {
        match *self {
            Term::Weighted { parent, weight } => weight * parents[parent],
            Term::Sine { parent, weight } => weight * parents[parent].sin(),
            Term::Square { parent, weight } => weight * parents[parent] * parents[parent],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Mechanism {
    Linear {
        weights: Vec<f64>,
        intercept: f64,
        noise_std: f64,
    },
    Analytic {
        terms: Vec<Term>,
        #[serde(default)]
        intercept: f64,
        noise_std: f64,
    },
    Root {
        mean: f64,
        std: f64,
    },
}

impl Mechanism {
    /// Deterministic part of the mechanism. Roots return their mean.
    pub fn eval(&self, parents: &[f64]) -> f64 {
        match self {
            Mechanism::Linear {
                weights, intercept, ..
            } => {
                weights
                    .iter()
                    .zip(parents)
                    .map(|(w, p)| w * p)
                    .sum::<f64>()
                    + intercept
            }
            Mechanism::Analytic {
                terms, intercept, ..
            } => terms.iter().map(|t| t.eval(parents)).sum::<f64>() + intercept,
            Mechanism::Root { mean, .. } => *mean,
        }
    }

    /// Standard deviation of the additive exogenous noise.
    pub fn noise_std(&self) -> f64 {
        match self {
            Mechanism::Linear { noise_std, .. } | Mechanism::Analytic { noise_std, .. } => {
                *noise_std
            }
            Mechanism::Root { std, .. } => *std,
        }
    }

    pub fn is_root(&self) -> bool {
        matches!(self, Mechanism::Root { .. })
    }

    /// Checks the mechanism against a parent count. Returns a description of
    /// the first violated invariant.
    pub fn check(&self, n_parents: usize) -> Result<(), String> {
        match self {
            Mechanism::Linear {
                weights, noise_std, ..
            } => {
                if weights.len() != n_parents {
                    return Err(format!(
                        "linear mechanism has {} weights for {} parents",
                        weights.len(),
                        n_parents
                    ));
                }
                check_noise(*noise_std)
            }
            Mechanism::Analytic {
                terms, noise_std, ..
            } => {
                if n_parents == 0 {
                    return Err("analytic mechanism on a node without parents".into());
                }
                if let Some(t) = terms.iter().find(|t| t.parent() >= n_parents) {
                    return Err(format!(
                        "term references parent slot {} of {}",
                        t.parent(),
                        n_parents
                    ));
                }
                check_noise(*noise_std)
            }
            Mechanism::Root { std, .. } => {
                if n_parents != 0 {
                    return Err(format!("root mechanism on a node with {n_parents} parents"));
                }
                if !(*std > 0.0) || !std.is_finite() {
                    return Err(format!("root std must be positive, got {std}"));
                }
                Ok(())
            }
        }
    }

    /// Same mechanism with its additive noise removed. Roots keep their spread.
    pub fn without_noise(&self) -> Mechanism {
        let mut m = self.clone();
        match &mut m {
            Mechanism::Linear { noise_std, .. } | Mechanism::Analytic { noise_std, .. } => {
                *noise_std = 0.0
            }
            Mechanism::Root { .. } => {}
        }
        m
    }
}

fn check_noise(noise_std: f64) -> Result<(), String> {
    if noise_std >= 0.0 && noise_std.is_finite() {
        Ok(())
    } else {
        Err(format!("noise_std must be >= 0, got {noise_std}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_terms() {
        let x3 = Mechanism::Analytic {
            terms: vec![
                Term::Weighted { parent: 0, weight: 0.5 },
                Term::Weighted { parent: 1, weight: -1.0 },
                Term::Sine { parent: 1, weight: 1.0 },
            ],
            intercept: 0.0,
            noise_std: 0.01,
        };
        assert_eq!(x3.eval(&[2.0, 0.0]), 1.0);
        let x5 = Mechanism::Analytic {
            terms: vec![Term::Square { parent: 0, weight: 0.2 }],
            intercept: 0.0,
            noise_std: 0.01,
        };
        assert_eq!(x5.eval(&[5.0]), 5.0);
    }

    #[test]
    fn arity_checks() {
        let lin = Mechanism::Linear {
            weights: vec![1.0],
            intercept: 0.0,
            noise_std: 0.1,
        };
        assert!(lin.check(1).is_ok());
        assert!(lin.check(2).is_err());
        let root = Mechanism::Root { mean: 0.0, std: 0.0 };
        assert!(root.check(0).is_err());
        let neg = Mechanism::Linear {
            weights: vec![],
            intercept: 0.0,
            noise_std: -1.0,
        };
        assert!(neg.check(0).is_err());
    }

    #[test]
    fn toml_tagging() {
        let m: Mechanism = toml::from_str(
            "kind = \"analytic\"\nnoise_std = 0.01\nterms = [{ op = \"sine\", parent = 0, weight = 1.0 }]",
        )
        .unwrap();
        assert_eq!(m.eval(&[0.0]), 0.0);
    }
}
