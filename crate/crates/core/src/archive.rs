//! Static time-series archive with labelled historical regimes.
//!
//! Each archive row `t` holds the features observed at `t` and the target
//! realized at `t + 1`, so a row is a complete (input, outcome) pair. Regimes
//! are inclusive date ranges; choosing a regime and drawing rows from it is
//! the observational analogue of an intervention.

use std::ops::Range;
use std::path::Path;

use chrono::{Months, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Provenance};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("regime '{0}' contains no rows")]
    EmptyRegime(String),
    #[error("invalid regime layout: {0}")]
    InvalidRegimes(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A regime as written in the config: inclusive ISO-8601 date bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub start: String,
    pub end: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub spec: RegimeSpec,
    /// Row indices covered by the regime.
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeQuery {
    pub regime: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    timestamps: Vec<NaiveDate>,
    feature_names: Vec<String>,
    /// Column-major feature values.
    features: Vec<Vec<f64>>,
    target_name: String,
    target: Vec<f64>,
    regimes: Vec<Regime>,
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate, ArchiveError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|e| ArchiveError::ParseError {
        line,
        message: format!("bad date '{s}': {e}"),
    })
}

impl Archive {
    /// Assembles an archive and attaches regimes. Regimes must be ordered,
    /// non-overlapping, and each must cover at least one row.
    pub fn new(
        timestamps: Vec<NaiveDate>,
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        target_name: String,
        target: Vec<f64>,
        regimes: &[RegimeSpec],
    ) -> Result<Self, ArchiveError> {
        if feature_names.is_empty() {
            return Err(ArchiveError::MissingColumn("at least one feature".into()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ArchiveError::ParseError {
                line: 0,
                message: "timestamps must be strictly increasing".into(),
            });
        }
        if regimes.len() < 2 {
            return Err(ArchiveError::InvalidRegimes("need at least two regimes".into()));
        }
        let mut attached = Vec::with_capacity(regimes.len());
        let mut prev_end: Option<NaiveDate> = None;
        for spec in regimes {
            let start = parse_date(&spec.start, 0)?;
            let end = parse_date(&spec.end, 0)?;
            if end < start {
                return Err(ArchiveError::InvalidRegimes(format!(
                    "regime '{}' ends before it starts",
                    spec.label
                )));
            }
            if prev_end.is_some_and(|p| start <= p) {
                return Err(ArchiveError::InvalidRegimes(format!(
                    "regime '{}' overlaps or precedes the previous regime",
                    spec.label
                )));
            }
            prev_end = Some(end);
            let lo = timestamps.partition_point(|t| *t < start);
            let hi = timestamps.partition_point(|t| *t <= end);
            if lo >= hi {
                return Err(ArchiveError::EmptyRegime(spec.label.clone()));
            }
            attached.push(Regime {
                spec: spec.clone(),
                rows: lo..hi,
            });
        }
        Ok(Archive {
            timestamps,
            feature_names,
            features,
            target_name,
            target,
            regimes: attached,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    pub fn regime_specs(&self) -> Vec<RegimeSpec> {
        self.regimes.iter().map(|r| r.spec.clone()).collect()
    }

    /// Learner-view column names: features then target.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        names.push(self.target_name.clone());
        names
    }

    /// Row `r` in learner view: features then target.
    pub fn row(&self, r: usize) -> Vec<f64> {
        let mut row: Vec<f64> = self.features.iter().map(|c| c[r]).collect();
        row.push(self.target[r]);
        row
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Draws `n` rows uniformly with replacement from `rows` and labels them
    /// with regime `regime`.
    pub fn sample_rows<R: Rng + ?Sized>(
        &self,
        regime: usize,
        rows: &[usize],
        n: usize,
        rng: &mut R,
    ) -> Result<Dataset, ArchiveError> {
        let label = self
            .regimes
            .get(regime)
            .map(|r| r.spec.label.clone())
            .ok_or_else(|| ArchiveError::InvalidQuery(format!("regime {regime} out of range")))?;
        if n == 0 {
            return Err(ArchiveError::InvalidQuery("n must be >= 1".into()));
        }
        if rows.is_empty() {
            return Err(ArchiveError::EmptyRegime(label));
        }
        let picked: Vec<Vec<f64>> = (0..n)
            .map(|_| self.row(rows[rng.random_range(0..rows.len())]))
            .collect();
        Dataset::from_rows(
            self.column_names(),
            &picked,
            Provenance::Regime { index: regime, label },
            vec![],
        )
        .map_err(|e| ArchiveError::InvalidQuery(e.to_string()))
    }

    /// `n` rows sampled uniformly with replacement from the regime.
    pub fn query<R: Rng + ?Sized>(&self, q: RegimeQuery, rng: &mut R) -> Result<Dataset, ArchiveError> {
        let rows: Vec<usize> = self
            .regimes
            .get(q.regime)
            .map(|r| r.rows.clone().collect())
            .unwrap_or_default();
        self.sample_rows(q.regime, &rows, q.n, rng)
    }

    /// Writes the archive as CSV: `timestamp`, features, target.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.column_names());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.timestamps[r].format(DATE_FORMAT).to_string()];
            rec.extend(self.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads an archive CSV. The first column must be `timestamp`; `target`
/// names the target column; every other column is a feature. Rows with an
/// empty or non-numeric field are rejected.
pub fn load_archive(
    csv_path: impl AsRef<Path>,
    target: &str,
    regimes: &[RegimeSpec],
) -> Result<Archive, ArchiveError> {
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("timestamp") {
        return Err(ArchiveError::MissingColumn("timestamp".into()));
    }
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| ArchiveError::MissingColumn(target.to_string()))?;
    let feature_idx: Vec<usize> = (1..header.len()).filter(|&i| i != target_idx).collect();
    if feature_idx.is_empty() {
        return Err(ArchiveError::MissingColumn("at least one feature".into()));
    }
    let mut timestamps = Vec::new();
    let mut features = vec![Vec::new(); feature_idx.len()];
    let mut target_col = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(ArchiveError::ParseError {
                line,
                message: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let num = |c: usize| -> Result<f64, ArchiveError> {
            let field = rec[c].trim();
            if field.is_empty() {
                return Err(ArchiveError::ParseError {
                    line,
                    message: format!("missing value in column '{}'", header[c]),
                });
            }
            let v: f64 = field.parse().map_err(|_| ArchiveError::ParseError {
                line,
                message: format!("'{field}' in column '{}' is not a number", header[c]),
            })?;
            if !v.is_finite() {
                return Err(ArchiveError::ParseError {
                    line,
                    message: format!("non-finite value in column '{}'", header[c]),
                });
            }
            Ok(v)
        };
        timestamps.push(parse_date(&rec[0], line)?);
        for (col, &c) in features.iter_mut().zip(&feature_idx) {
            col.push(num(c)?);
        }
        target_col.push(num(target_idx)?);
    }
    let names = feature_idx.iter().map(|&i| header[i].clone()).collect();
    Archive::new(timestamps, names, features, target.to_string(), target_col, regimes)
}

/// Regime behaviour of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    /// Near-linear target, small feature swings, small noise.
    Calm,
    /// Nonlinear target, large feature swings, larger noise.
    Volatile,
}

/// Kind of synthetic regime `r`: even indices are calm, odd are volatile.
pub fn synthetic_regime_kind(r: usize) -> RegimeKind {
    if r % 2 == 0 {
        RegimeKind::Calm
    } else {
        RegimeKind::Volatile
    }
}

/// Target law of a synthetic regime (without noise).
pub fn synthetic_target(kind: RegimeKind, f: [f64; 3]) -> f64 {
    let linear = 0.5 * f[0] - 0.3 * f[1] + 0.2 * f[2];
    match kind {
        RegimeKind::Calm => linear,
        RegimeKind::Volatile => linear + 0.8 * (2.0 * f[0]).sin() + 0.3 * f[1] * f[1],
    }
}

/// Monthly archive starting 1960-01-01 with three AR(1) features and a
/// one-step-ahead target, split into `n_regimes` contiguous equal blocks
/// alternating calm and volatile.
pub fn generate_synthetic_archive<R: Rng + ?Sized>(
    n_rows: usize,
    n_regimes: usize,
    rng: &mut R,
) -> Result<Archive, ArchiveError> {
    if n_regimes < 2 {
        return Err(ArchiveError::InvalidRegimes("need at least two regimes".into()));
    }
    if n_rows < n_regimes {
        return Err(ArchiveError::InvalidRegimes("need at least one row per regime".into()));
    }
    let origin = NaiveDate::from_ymd_opt(1960, 1, 1).expect("valid date");
    let timestamps: Vec<NaiveDate> = (0..n_rows)
        .map(|i| origin + Months::new(i as u32))
        .collect();
    let bounds: Vec<usize> = (0..=n_regimes).map(|r| r * n_rows / n_regimes).collect();
    let regime_of = |row: usize| bounds.partition_point(|&b| b <= row) - 1;
    let phi: f64 = 0.8;
    let innov = (1.0 - phi * phi).sqrt();
    let mut features = vec![Vec::with_capacity(n_rows); 3];
    let mut target = Vec::with_capacity(n_rows);
    let mut f = [0.0f64; 3];
    for row in 0..n_rows {
        let kind = synthetic_regime_kind(regime_of(row));
        let (scale, noise) = match kind {
            RegimeKind::Calm => (0.5, 0.05),
            RegimeKind::Volatile => (1.5, 0.3),
        };
        for v in f.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = phi * *v + scale * innov * z;
        }
        for (col, v) in features.iter_mut().zip(f) {
            col.push(v);
        }
        let z: f64 = rng.sample(StandardNormal);
        target.push(synthetic_target(kind, f) + noise * z);
    }
    let regimes: Vec<RegimeSpec> = (0..n_regimes)
        .map(|r| {
            let label = match synthetic_regime_kind(r) {
                RegimeKind::Calm => format!("calm-{r}"),
                RegimeKind::Volatile => format!("volatile-{r}"),
            };
            RegimeSpec {
                start: timestamps[bounds[r]].format(DATE_FORMAT).to_string(),
                end: timestamps[bounds[r + 1] - 1].format(DATE_FORMAT).to_string(),
                label,
            }
        })
        .collect();
    Archive::new(
        timestamps,
        vec!["f1".into(), "f2".into(), "f3".into()],
        features,
        "y_next".into(),
        target,
        &regimes,
    )
}
