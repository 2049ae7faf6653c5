//! Column-major sample matrices with provenance.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset must have at least one row")]
    NoRows,
    #[error("expected {expected} columns, got {got}")]
    ColumnCount { expected: usize, got: usize },
    #[error("column {column} has {got} rows, expected {expected}")]
    RaggedColumn {
        column: usize,
        expected: usize,
        got: usize,
    },
    #[error("intervened column {column} is not constant at {value}")]
    NotConstant { column: usize, value: f64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("could not parse '{value}' in column {column} as a number")]
    Parse { column: String, value: String },
}

/// Where a batch of rows came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Observational,
    /// `do(node = value)` on an SCM.
    Intervention { node: usize, value: f64 },
    /// An oscillator held at a fixed position.
    Clamp { oscillator: usize, value: f64 },
    /// Rows drawn from a historical regime.
    Regime { index: usize, label: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    provenance: Provenance,
    /// Columns whose values were set externally rather than generated by
    /// their own mechanism.
    clamped: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    provenance: Provenance,
    clamped: Vec<usize>,
    seed: Option<u64>,
    n: usize,
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        provenance: Provenance,
        clamped: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        if columns.len() != names.len() {
            return Err(DatasetError::ColumnCount {
                expected: names.len(),
                got: columns.len(),
            });
        }
        let rows = columns.first().map_or(0, Vec::len);
        if rows == 0 {
            return Err(DatasetError::NoRows);
        }
        for (i, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(DatasetError::RaggedColumn {
                    column: i,
                    expected: rows,
                    got: c.len(),
                });
            }
        }
        let ds = Dataset {
            names,
            columns,
            provenance,
            clamped,
        };
        if let Provenance::Intervention { node, value } = ds.provenance {
            if node >= ds.columns.len() {
                return Err(DatasetError::ColumnCount {
                    expected: node + 1,
                    got: ds.columns.len(),
                });
            }
            if ds.columns[node].iter().any(|&v| v.to_bits() != value.to_bits()) {
                return Err(DatasetError::NotConstant { column: node, value });
            }
        }
        Ok(ds)
    }

    /// Builds from row-major data.
    pub fn from_rows(
        names: Vec<String>,
        rows: &[Vec<f64>],
        provenance: Provenance,
        clamped: Vec<usize>,
    ) -> Result<Self, DatasetError> {
        let n_cols = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); n_cols];
        for row in rows {
            if row.len() != n_cols {
                return Err(DatasetError::ColumnCount {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        Self::new(names, columns, provenance, clamped)
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }

    /// Writes the matrix as CSV with node names as header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        let mut record = Vec::with_capacity(self.n_cols());
        for r in 0..self.n_rows() {
            record.clear();
            record.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the JSON provenance sidecar for a CSV export.
    pub fn write_sidecar(&self, path: impl AsRef<Path>, seed: Option<u64>) -> Result<(), DatasetError> {
        let sidecar = Sidecar {
            provenance: self.provenance.clone(),
            clamped: self.clamped.clone(),
            seed,
            n: self.n_rows(),
        };
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &sidecar)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a CSV export and its sidecar back.
    pub fn read_csv(csv_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<(Self, Option<u64>), DatasetError> {
        let sidecar: Sidecar = serde_json::from_reader(File::open(sidecar_path)?)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (i, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| DatasetError::Parse {
                    column: names[i].clone(),
                    value: field.to_string(),
                })?;
                columns[i].push(v);
            }
        }
        let ds = Dataset::new(names, columns, sidecar.provenance, sidecar.clamped)?;
        Ok((ds, sidecar.seed))
    }
}
