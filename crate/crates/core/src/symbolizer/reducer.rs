//! Embedding reducers applied to standardized feature rows before clustering.

use std::fmt::Debug;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::ReducerKind;
use crate::error::{Error, Result};

use super::matrix::Matrix;

pub trait EmbeddingReducer: Debug + Send + Sync {
    fn kind(&self) -> ReducerKind;

    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Maps every row; the row count is preserved.
    fn transform(&self, rows: &Matrix) -> Result<Matrix>;

    /// Named parameter arrays, in the order they are stored in a model file.
    fn arrays(&self) -> Vec<(&'static str, &[f64])>;

    fn clone_box(&self) -> Box<dyn EmbeddingReducer>;
}

impl Clone for Box<dyn EmbeddingReducer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Projection onto the leading principal components of the fitted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaReducer {
    mean: Vec<f64>,
    /// `output_dim x input_dim`, one component per row, by descending variance.
    components: Matrix,
}

impl PcaReducer {
    pub fn from_parts(mean: Vec<f64>, components: Matrix) -> Result<Self> {
        if components.cols() != mean.len() || components.rows() == 0 {
            return Err(Error::Validation(format!(
                "reducer components are {}x{} but the mean has length {}",
                components.rows(),
                components.cols(),
                mean.len()
            )));
        }
        Ok(Self { mean, components })
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

impl EmbeddingReducer for PcaReducer {
    fn kind(&self) -> ReducerKind {
        ReducerKind::Pca
    }

    fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn output_dim(&self) -> usize {
        self.components.rows()
    }

    fn transform(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: rows.cols(),
            });
        }
        let mut out = Matrix::zeros(rows.rows(), self.output_dim());
        let mut centered = vec![0.0; self.input_dim()];
        for (i, row) in rows.iter_rows().enumerate() {
            for ((c, v), m) in centered.iter_mut().zip(row).zip(&self.mean) {
                *c = v - m;
            }
            for (slot, comp) in out.row_mut(i).iter_mut().zip(self.components.iter_rows()) {
                *slot = comp.iter().zip(&centered).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("reducer_mean", self.mean.as_slice()),
            ("reducer_components", self.components.as_slice()),
        ]
    }

    fn clone_box(&self) -> Box<dyn EmbeddingReducer> {
        Box::new(self.clone())
    }
}

/// Pass-through for rows that were reduced upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityReducer {
    dim: usize,
}

impl IdentityReducer {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl EmbeddingReducer for IdentityReducer {
    fn kind(&self) -> ReducerKind {
        ReducerKind::Identity
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn transform(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: rows.cols(),
            });
        }
        Ok(rows.clone())
    }

    fn arrays(&self) -> Vec<(&'static str, &[f64])> {
        Vec::new()
    }

    fn clone_box(&self) -> Box<dyn EmbeddingReducer> {
        Box::new(*self)
    }
}

/// Fits a PCA projection onto the top `dim` components of the population
/// covariance. Each component is sign-fixed so that its largest-magnitude
/// coordinate is positive. `_seed` is accepted for reducers that need one;
/// PCA is deterministic without it.
pub fn fit_pca(rows: &Matrix, dim: usize, _seed: u64) -> Result<PcaReducer> {
    let n = rows.cols();
    if rows.is_empty() {
        return Err(Error::RankDeficient("no rows to fit".into()));
    }
    if dim == 0 || dim > n {
        return Err(Error::InvalidConfig(format!(
            "reducer dimension {dim} must be between 1 and the feature width {n}"
        )));
    }
    let count = rows.rows() as f64;
    let mut mean = vec![0.0; n];
    for row in rows.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut centered = vec![0.0; n];
    for row in rows.iter_rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for a in 0..n {
            let ca = centered[a];
            for b in a..n {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..n {
        for b in a..n {
            let v = cov[(a, b)] / count;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut components = Matrix::zeros(dim, n);
    for (out_row, &col) in order.iter().take(dim).enumerate() {
        let v = eigen.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (slot, x) in components.row_mut(out_row).iter_mut().zip(v.iter()) {
            *slot = sign * x;
        }
    }
    PcaReducer::from_parts(mean, components)
}

pub fn fit_reducer(rows: &Matrix, kind: ReducerKind, dim: usize, seed: u64) -> Result<Box<dyn EmbeddingReducer>> {
    match kind {
        ReducerKind::Pca => Ok(Box::new(fit_pca(rows, dim, seed)?)),
        ReducerKind::Identity => {
            if rows.is_empty() {
                return Err(Error::RankDeficient("no rows to fit".into()));
            }
            Ok(Box::new(IdentityReducer::new(rows.cols())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Cyclic Jacobi eigenvalue iteration, kept independent of nalgebra.
    #[allow(clippy::needless_range_loop)]
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        ev
    }

    fn covariance(m: &Matrix) -> Vec<Vec<f64>> {
        let (r, c) = (m.rows(), m.cols());
        let mean: Vec<f64> = (0..c)
            .map(|j| (0..r).map(|i| m.get(i, j)).sum::<f64>() / r as f64)
            .collect();
        (0..c)
            .map(|a| {
                (0..c)
                    .map(|b| {
                        (0..r)
                            .map(|i| (m.get(i, a) - mean[a]) * (m.get(i, b) - mean[b]))
                            .sum::<f64>()
                            / r as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn projection_variance_matches_top_eigenvalues() {
        let m = random_matrix(50, 8, 11);
        let reducer = fit_pca(&m, 3, 0).unwrap();
        let projected = reducer.transform(&m).unwrap();
        let variance: f64 = covariance(&projected).iter().enumerate().map(|(i, r)| r[i]).sum();
        let ev = jacobi_eigenvalues(covariance(&m));
        let top3: f64 = ev[..3].iter().sum();
        assert!((variance - top3).abs() < 1e-9, "{variance} vs {top3}");
    }

    #[test]
    fn rank_one_data_is_recovered() {
        // Points on the line (1, 2) * t + (3, -1).
        let ts = [-2.0, -0.5, 0.0, 1.0, 4.0];
        let rows: Vec<[f64; 2]> = ts.iter().map(|t| [3.0 + t, -1.0 + 2.0 * t]).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let reducer = fit_pca(&m, 1, 0).unwrap();
        let z = reducer.transform(&m).unwrap();
        let comp = reducer.components().row(0).to_vec();
        for (i, row) in m.iter_rows().enumerate() {
            let rebuilt: Vec<f64> = (0..2).map(|j| reducer.mean()[j] + z.get(i, 0) * comp[j]).collect();
            assert!((rebuilt[0] - row[0]).abs() < 1e-9 && (rebuilt[1] - row[1]).abs() < 1e-9);
        }
        // Coordinate is affine in t: z = sqrt(5) * (t - mean(t)) once the sign is fixed.
        let mean_t = ts.iter().sum::<f64>() / ts.len() as f64;
        for (i, t) in ts.iter().enumerate() {
            assert!((z.get(i, 0) - 5f64.sqrt() * (t - mean_t)).abs() < 1e-9);
        }
    }

    #[test]
    fn full_dimension_is_an_isometry() {
        let m = random_matrix(20, 5, 3);
        let reducer = fit_pca(&m, 5, 0).unwrap();
        let z = reducer.transform(&m).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let before = super::super::matrix::squared_distance(m.row(i), m.row(j)).sqrt();
                let after = super::super::matrix::squared_distance(z.row(i), z.row(j)).sqrt();
                assert!((before - after).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn components_are_sign_fixed_and_deterministic() {
        let m = random_matrix(30, 6, 5);
        let a = fit_pca(&m, 4, 1).unwrap();
        let b = fit_pca(&m, 4, 2).unwrap();
        assert_eq!(a, b);
        for comp in a.components().iter_rows() {
            let pivot = comp
                .iter()
                .cloned()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn fewer_rows_than_dim_pads_with_zero_variance() {
        let m = Matrix::from_rows(&[[1.0, 0.0, 0.0, 2.0], [0.0, 1.0, 0.0, 2.0]]).unwrap();
        let reducer = fit_pca(&m, 3, 0).unwrap();
        let z = reducer.transform(&m).unwrap();
        assert_eq!((z.rows(), z.cols()), (2, 3));
        for i in 0..2 {
            assert!(z.get(i, 1).abs() < 1e-9 && z.get(i, 2).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_pca(&Matrix::empty(3), 2, 0), Err(Error::RankDeficient(_))));
        assert!(matches!(
            fit_pca(&random_matrix(5, 3, 0), 4, 0),
            Err(Error::InvalidConfig(_))
        ));
        let r = fit_pca(&random_matrix(5, 3, 0), 2, 0).unwrap();
        assert!(r.transform(&random_matrix(2, 4, 0)).is_err());
    }
}
