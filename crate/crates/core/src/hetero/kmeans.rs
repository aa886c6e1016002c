use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::derive_seed;

/// K-means partition in principal-component space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// k x R.
    pub centroids: DMatrix<f64>,
    pub k: usize,
    pub inertia: f64,
    pub seed: u64,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Euclidean distance from `point` to every centroid.
    pub fn distances(&self, point: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                point
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.centroids[(c, j)]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

struct Run {
    centroids: Vec<f64>,
    inertia: f64,
    iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index (ties to the lowest index) and its squared distance.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        for (i, p) in points.chunks_exact(dim).enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[start..start + dim]));
        }
    }
    centroids
}

fn lloyd(points: &[f64], n: usize, dim: usize, k: usize, max_iter: usize, seed: u64) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, n, dim, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut d2 = vec![0.0; n];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(p, &centroids, dim);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            d2[i] = d;
        }
        if !changed || iterations >= max_iter {
            let inertia = d2.iter().sum();
            return Run {
                centroids,
                inertia,
                iterations,
            };
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let c = labels[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Empty cluster: move it onto the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&points[far * dim..(far + 1) * dim]);
                d2[far] = 0.0;
                labels[far] = c;
            } else {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding; best of `n_init` restarts by inertia.
///
/// Restart `r` uses a seed derived from `(seed, r)`; ties in inertia go to the
/// lowest restart index, so the result does not depend on thread scheduling.
pub fn fit_kmeans(z: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize, n_init: usize) -> Result<ClusterModel> {
    let (n, dim) = z.shape();
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds the number of points {n}")));
    }
    if dim == 0 {
        return Err(Error::Argument("points have zero dimensions".into()));
    }
    let mut points = Vec::with_capacity(n * dim);
    for i in 0..n {
        points.extend(z.row(i).iter());
    }
    let runs: Vec<Run> = (0..n_init.max(1))
        .into_par_iter()
        .map(|r| lloyd(&points, n, dim, k, max_iter, derive_seed(seed, r as u64)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(ClusterModel {
        centroids: DMatrix::from_row_slice(k, dim, &best.centroids),
        k,
        inertia: best.inertia,
        seed,
        iterations: best.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_corners_are_their_own_clusters() {
        let z = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let m = fit_kmeans(&z, 4, 3, 100, 5).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut rows: Vec<(f64, f64)> = (0..4).map(|c| (m.centroids[(c, 0)], m.centroids[(c, 1)])).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 3.0, 2.0, 0.0, 4.0, 6.0]);
        let m = fit_kmeans(&z, 1, 0, 10, 1).unwrap();
        assert!((m.centroids[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((m.centroids[(0, 1)] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let z = DMatrix::zeros(2, 1);
        assert!(matches!(fit_kmeans(&z, 3, 0, 10, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let z = DMatrix::from_fn(200, 3, |i, j| ((i * 31 + j * 17) % 23) as f64);
        let a = fit_kmeans(&z, 5, 42, 300, 4).unwrap();
        let b = fit_kmeans(&z, 5, 42, 300, 4).unwrap();
        assert_eq!(a, b);
    }
}
