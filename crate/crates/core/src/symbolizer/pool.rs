use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Hidden-layer activations, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::EmptyFeatureMap);
        }
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(pos));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.values[(channel * self.height + y) * self.width + x]
    }
}

/// Up to nine pooled rows of length `n`, one per non-empty 3x3 grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureArray {
    rows: Matrix,
    /// Row-major cell index (0..9) of each row.
    cells: Vec<u8>,
}

impl FeatureArray {
    pub fn new(rows: Matrix, cells: Vec<u8>) -> Result<Self> {
        if rows.rows() > 9 || cells.len() != rows.rows() {
            return Err(Error::Validation(format!(
                "feature array must have at most 9 rows with one cell index each, got {} rows and {} cells",
                rows.rows(),
                cells.len()
            )));
        }
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature array contains non-finite values".into()));
        }
        Ok(Self { rows, cells })
    }

    /// Rows taken as-is, numbered from cell 0.
    pub fn from_rows(rows: Matrix) -> Result<Self> {
        let cells = (0..rows.rows() as u8).collect();
        Self::new(rows, cells)
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Cell `i` of an axis of length `len` spans `floor(i*len/3) .. floor((i+1)*len/3)`.
fn cell_span(i: usize, len: usize) -> std::ops::Range<usize> {
    (i * len / 3)..((i + 1) * len / 3)
}

/// Mean-pools each channel over a floor-partitioned 3x3 grid. Empty cells
/// (when an axis is shorter than 3) are omitted.
pub fn coarse_pool(fm: &FeatureMap) -> Result<FeatureArray> {
    let n = fm.channels();
    let mut rows = Matrix::empty(n);
    let mut cells = Vec::with_capacity(9);
    let mut row = vec![0.0f64; n];
    for cy in 0..3 {
        let ys = cell_span(cy, fm.height());
        for cx in 0..3 {
            let xs = cell_span(cx, fm.width());
            let count = ys.len() * xs.len();
            if count == 0 {
                continue;
            }
            for (c, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for y in ys.clone() {
                    for x in xs.clone() {
                        acc += fm.at(c, y, x) as f64;
                    }
                }
                *out = acc / count as f64;
            }
            rows.push_row(&row)?;
            cells.push((cy * 3 + cx) as u8);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyFeatureMap);
    }
    FeatureArray::new(rows, cells)
}
