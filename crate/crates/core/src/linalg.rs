//! Small numerical helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Pairwise (cascade) summation in a fixed tree order.
///
/// The split points depend only on the slice length, so the result is
/// bitwise reproducible regardless of how the caller schedules work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sum of `f(i)` for `i in 0..n`, reduced pairwise.
pub fn pairwise_sum_by(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = (0..n).map(f).collect();
    pairwise_sum(&terms)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Two-sided normal critical value for a confidence level in (0, 1).
pub fn z_critical(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Per-column centering and optional scaling learned on a training matrix.
///
/// Columns with (numerically) zero variance are marked inactive; their
/// transformed value is always 0 so they drop out of every downstream fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub active: Vec<bool>,
    pub standardized: bool,
}

impl FeatureScaling {
    pub fn fit(x: &DMatrix<f64>, standardize: bool) -> Self {
        let n = x.nrows().max(1) as f64;
        let m = x.ncols();
        let mut means = Vec::with_capacity(m);
        let mut scales = Vec::with_capacity(m);
        let mut active = Vec::with_capacity(m);
        for j in 0..m {
            let col = x.column(j);
            let mu = pairwise_sum(col.as_slice()) / n;
            let ss: Vec<f64> = col.iter().map(|v| (v - mu) * (v - mu)).collect();
            let sd = (pairwise_sum(&ss) / n).sqrt();
            let is_active = sd > 1e-12 * mu.abs().max(1.0);
            means.push(mu);
            scales.push(if standardize && is_active { sd } else { 1.0 });
            active.push(is_active);
        }
        FeatureScaling {
            means,
            scales,
            active,
            standardized: standardize,
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..self.n_features() {
            let mut col = out.column_mut(j);
            if self.active[j] {
                let (mu, s) = (self.means[j], self.scales[j]);
                col.apply(|v| *v = (*v - mu) / s);
            } else {
                col.fill(0.0);
            }
        }
        out
    }
}

/// Solves `a x = b` for a symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    // Reject numerically singular systems: tiny pivot relative to the largest.
    let l = chol.l_dirty();
    let n = a.nrows();
    let max_d = (0..n).map(|k| l[(k, k)]).fold(0.0f64, f64::max);
    if (0..n).any(|k| l[(k, k)] <= max_d * 1e-7) {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Moore-Penrose inverse of a symmetric PSD matrix together with its numerical rank.
pub fn pinv_symmetric(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = a.clone().symmetric_eigen();
    let max_ev = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = max_ev * (a.nrows().max(1) as f64) * 1e-12;
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cutoff && ev > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / ev;
        }
    }
    (inv, rank)
}

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// SplitMix64 step, used to derive independent child seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
