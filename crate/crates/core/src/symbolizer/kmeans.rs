//! Lloyd's k-means with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::matrix::{nearest_centroid, squared_distance, Matrix};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares of the returned centroids and assignments.
    pub objective: f64,
    /// Objective after every assignment step, ending with `objective`.
    pub history: Vec<f64>,
    pub iterations: usize,
}

pub fn fit_clusters(points: &Matrix, k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if points.is_empty() {
        return Err(Error::Validation("k-means needs at least one point".into()));
    }
    let n = points.rows();
    if k >= n {
        // Every point gets its own centroid; the surplus repeats points in order.
        let order: Vec<usize> = (0..k).map(|i| i % n).collect();
        let centroids = points.select_rows(&order);
        return Ok(finish(points, centroids, vec![], 0));
    }

    let mut centroids = plus_plus_init(points, k, seed);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        let (assignments, distances) = assign(points, &centroids);
        history.push(distances.iter().sum());
        iterations += 1;
        let shift = update(points, &mut centroids, &assignments, &distances);
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    Ok(finish(points, centroids, history, iterations))
}

fn finish(points: &Matrix, centroids: Matrix, mut history: Vec<f64>, iterations: usize) -> KMeansFit {
    let (assignments, distances) = assign(points, &centroids);
    let objective = distances.iter().sum();
    history.push(objective);
    KMeansFit {
        centroids,
        assignments,
        objective,
        history,
        iterations,
    }
}

fn plus_plus_init(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, d) in nearest.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if target < *d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Fewer distinct points than k: duplicate the lowest unused index.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(chosen.len() % n)
        };
        chosen.push(next);
        for (i, p) in points.iter_rows().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    points.iter_rows().map(|p| nearest_centroid(p, centroids)).unzip()
}

/// Moves every centroid to the mean of its members and re-seeds empty
/// clusters at the points farthest from their current centroid. Returns the
/// largest centroid displacement.
fn update(points: &Matrix, centroids: &mut Matrix, assignments: &[usize], distances: &[f64]) -> f64 {
    let (k, d) = (centroids.rows(), centroids.cols());
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter_rows().zip(assignments) {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(p) {
            *s += v;
        }
    }

    let mut by_distance: Vec<usize> = (0..points.rows()).collect();
    by_distance.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
    let mut donors = by_distance.into_iter().filter(|&i| distances[i] > 0.0);

    let mut shift = 0.0f64;
    for (c, &count) in counts.iter().enumerate() {
        let target: Vec<f64> = if count > 0 {
            sums.row(c).iter().map(|s| s / count as f64).collect()
        } else if let Some(i) = donors.next() {
            points.row(i).to_vec()
        } else {
            continue;
        };
        shift = shift.max(squared_distance(centroids.row(c), &target).sqrt());
        centroids.row_mut(c).copy_from_slice(&target);
    }
    shift
}
