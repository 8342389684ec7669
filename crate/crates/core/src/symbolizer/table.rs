use serde::{Deserialize, Serialize};

use crate::domain::ClassId;
use crate::error::{Error, Result};

use super::matrix::Matrix;
use super::pool::FeatureArray;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub example: usize,
    pub cell: u8,
    pub label: ClassId,
}

/// Pooled rows of many examples stacked into one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Matrix,
    pub origins: Vec<RowOrigin>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }
}

pub fn build_feature_table(examples: &[(FeatureArray, ClassId)]) -> Result<FeatureTable> {
    let Some((first, _)) = examples.first() else {
        return Err(Error::Validation("no training examples".into()));
    };
    let n = first.width();
    let mut rows = Matrix::empty(n);
    let mut origins = Vec::new();
    for (example, (fa, label)) in examples.iter().enumerate() {
        if fa.width() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: fa.width(),
            });
        }
        for (row, &cell) in fa.rows().iter_rows().zip(fa.cells()) {
            rows.push_row(row)?;
            origins.push(RowOrigin {
                example,
                cell,
                label: *label,
            });
        }
    }
    Ok(FeatureTable { rows, origins })
}

pub fn column_means(rows: &Matrix) -> Vec<f64> {
    let mut sums = vec![0.0f64; rows.cols()];
    for row in rows.iter_rows() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let count = rows.rows().max(1) as f64;
    sums.into_iter().map(|s| s / count).collect()
}

/// A row is quiescent when every component is strictly below its column mean.
pub fn is_quiescent(row: &[f64], means: &[f64]) -> bool {
    row.iter().zip(means).all(|(v, m)| v < m)
}

pub fn remove_quiescent(table: &FeatureTable) -> Result<(FeatureTable, Vec<f64>)> {
    if table.is_empty() {
        return Err(Error::Validation("cannot filter an empty feature table".into()));
    }
    let means = column_means(&table.rows);
    let keep: Vec<usize> = (0..table.len())
        .filter(|&i| !is_quiescent(table.rows.row(i), &means))
        .collect();
    if keep.is_empty() {
        return Err(Error::AllQuiescent);
    }
    let filtered = FeatureTable {
        rows: table.rows.select_rows(&keep),
        origins: keep.iter().map(|&i| table.origins[i]).collect(),
    };
    Ok((filtered, means))
}

/// Affine standardization. One entry in `mu`/`sigma` means a single global
/// scale; `n` entries mean per-column scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Standardization {
    pub fn is_global(&self) -> bool {
        self.mu.len() == 1
    }

    pub fn apply(&self, rows: &Matrix) -> Matrix {
        let mut out = rows.clone();
        let cols = out.cols();
        for (idx, v) in out.as_mut_slice().iter_mut().enumerate() {
            let j = if self.is_global() { 0 } else { idx % cols };
            *v = (*v - self.mu[j]) / self.sigma[j];
        }
        out
    }
}

pub fn fit_standardization(rows: &Matrix, per_column: bool) -> Result<Standardization> {
    if rows.is_empty() {
        return Err(Error::Validation("cannot standardize an empty table".into()));
    }
    if !per_column {
        let values = rows.as_slice();
        let count = values.len() as f64;
        let mu = values.iter().sum::<f64>() / count;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
        let sigma = var.sqrt();
        if sigma == 0.0 || !sigma.is_finite() {
            return Err(Error::DegenerateScale);
        }
        return Ok(Standardization {
            mu: vec![mu],
            sigma: vec![sigma],
        });
    }
    let mu = column_means(rows);
    let count = rows.rows() as f64;
    let mut var = vec![0.0f64; rows.cols()];
    for row in rows.iter_rows() {
        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mu) {
            *acc += (v - m) * (v - m);
        }
    }
    let mut sigma: Vec<f64> = var.into_iter().map(|v| (v / count).sqrt()).collect();
    if sigma.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateScale);
    }
    // Constant columns are only centered.
    for s in sigma.iter_mut().filter(|s| **s == 0.0) {
        *s = 1.0;
    }
    Ok(Standardization { mu, sigma })
}

pub fn standardize(table: &FeatureTable) -> Result<(FeatureTable, f64, f64)> {
    let params = fit_standardization(&table.rows, false)?;
    let rows = params.apply(&table.rows);
    Ok((
        FeatureTable {
            rows,
            origins: table.origins.clone(),
        },
        params.mu[0],
        params.sigma[0],
    ))
}
