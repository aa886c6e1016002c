//! Customer-level effects.
//!
//! Features are compressed with PCA, clustered with K-means, and each
//! customer gets inverse-distance cluster scores `psi` (non-negative, summing
//! to one). The final stage then regresses the outcome residual on
//! `psi * d_res`, giving one coefficient per cluster; a customer's effect is
//! `h = psi . beta` with variance `psi Cov(beta) psi'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::final_stage::normal_ci;
use crate::linalg::{pairwise_sum_by, pinv_symmetric, symmetrize};
use crate::nuisance::CrossFitResult;
use crate::weighting::WeightedSample;

pub mod kmeans;
pub mod pca;

pub use kmeans::{fit_kmeans, ClusterModel};
pub use pca::{fit_pca, ComponentSelection, ExplainedVariance, PcaBasis};

/// Distances below this are treated as sitting exactly on a centroid.
pub const ON_CENTROID: f64 = 1e-12;

/// Inverse-distance scores of one point against every centroid.
pub fn cluster_scores(point: &[f64], clusters: &ClusterModel) -> Vec<f64> {
    scores_from_distances(&clusters.distances(point))
}

pub fn scores_from_distances(dist: &[f64]) -> Vec<f64> {
    let (nearest, dmin) = dist
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bd), (i, &d)| if d < bd { (i, d) } else { (bi, bd) });
    if dmin < ON_CENTROID {
        let mut psi = vec![0.0; dist.len()];
        psi[nearest] = 1.0;
        return psi;
    }
    let inv: Vec<f64> = dist.iter().map(|d| 1.0 / d).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|v| v / total).collect()
}

/// Scores for every row of `z` (N x K).
pub fn psi_matrix(z: &DMatrix<f64>, clusters: &ClusterModel) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(z.nrows(), clusters.k);
    let mut row = vec![0.0; z.ncols()];
    for i in 0..z.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = z[(i, j)];
        }
        let psi = cluster_scores(&row, clusters);
        for (c, p) in psi.into_iter().enumerate() {
            out[(i, c)] = p;
        }
    }
    out
}

/// Coefficients of the interacted final regression and their covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroCoefficients {
    pub beta: Vec<f64>,
    pub cov_hc: DMatrix<f64>,
    pub cov_homoscedastic: DMatrix<f64>,
    pub n_used: usize,
    pub rank: usize,
}

/// Weighted least squares of `y` on the rows of `x` (no intercept) with
/// sandwich covariances. Rank-deficient designs fall back to the
/// minimum-norm solution only when `allow_rank_deficient` is set.
pub fn weighted_regression(
    y: &[f64],
    x: &DMatrix<f64>,
    w: &[f64],
    allow_rank_deficient: bool,
) -> Result<HeteroCoefficients> {
    let (n, k) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::Argument("design, response and weights differ in length".into()));
    }
    if n < k {
        return Err(Error::Estimation(format!("{n} observations cannot identify {k} coefficients")));
    }
    let mut xw = x.clone();
    for i in 0..n {
        xw.row_mut(i).scale_mut(w[i].sqrt());
    }
    let a = xw.tr_mul(&xw);
    let (a_inv, rank) = pinv_symmetric(&a);
    if rank < k && !allow_rank_deficient {
        return Err(Error::Estimation(format!(
            "interacted design has rank {rank} < {k} clusters; use fewer clusters"
        )));
    }
    let wy = DVector::from_iterator(n, (0..n).map(|i| w[i] * y[i]));
    let beta = &a_inv * x.tr_mul(&wy);

    let fitted = x * &beta;
    let u2: Vec<f64> = (0..n).map(|i| (y[i] - fitted[i]).powi(2)).collect();
    let sigma2 = pairwise_sum_by(n, |i| w[i] * u2[i]) / pairwise_sum_by(n, |i| w[i]);
    // meat = sum_p (w_p)^2 s_p x_p x_p' with s_p = u_p^2 (HC) or sigma2 (homoscedastic)
    let mut scaled_hc = x.clone();
    let mut scaled_homo = x.clone();
    for i in 0..n {
        scaled_hc.row_mut(i).scale_mut(w[i] * u2[i].sqrt());
        scaled_homo.row_mut(i).scale_mut(w[i] * sigma2.sqrt());
    }
    let meat_hc = scaled_hc.tr_mul(&scaled_hc);
    let meat_homo = scaled_homo.tr_mul(&scaled_homo);
    let mut cov_hc = &a_inv * meat_hc * &a_inv;
    let mut cov_homo = &a_inv * meat_homo * &a_inv;
    symmetrize(&mut cov_hc);
    symmetrize(&mut cov_homo);
    Ok(HeteroCoefficients {
        beta: beta.iter().copied().collect(),
        cov_hc,
        cov_homoscedastic: cov_homo,
        n_used: n,
        rank,
    })
}

/// Interacted design rows `psi_p * d_res_p` restricted to the kept sample.
pub fn interacted_design(cf: &CrossFitResult, ws: &WeightedSample, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = psi.select_rows(ws.kept_indices.iter());
    for (r, &i) in ws.kept_indices.iter().enumerate() {
        x.row_mut(r).scale_mut(cf.d_res[i]);
    }
    x
}

/// Fits the interacted residual regression on the kept sample.
pub fn fit_hetero_stage(cf: &CrossFitResult, ws: &WeightedSample, psi: &DMatrix<f64>) -> Result<HeteroCoefficients> {
    if psi.nrows() != cf.n() {
        return Err(Error::Argument(format!(
            "score matrix has {} rows, expected {}",
            psi.nrows(),
            cf.n()
        )));
    }
    if psi.ncols() < 2 {
        return Err(Error::Argument("heterogeneity stage needs at least 2 clusters".into()));
    }
    let x = interacted_design(cf, ws, psi);
    let y: Vec<f64> = ws.kept_indices.iter().map(|&i| cf.y_res[i]).collect();
    weighted_regression(&y, &x, &ws.weights, false)
}

/// Settings for the PCA + K-means scoring pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroOptions {
    pub selection: ComponentSelection,
    pub standardize_features: bool,
    pub standardize_components: bool,
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for HeteroOptions {
    fn default() -> Self {
        HeteroOptions {
            selection: ComponentSelection::TargetVariance(0.8),
            standardize_features: true,
            standardize_components: true,
            k: 20,
            seed: 0,
            n_init: 10,
            max_iter: 300,
        }
    }
}

/// PCA basis, cluster model and interacted coefficients.
#[derive(Debug, Clone)]
pub struct HeteroModel {
    pub basis: PcaBasis,
    /// Per-component scale applied before clustering (1 when not standardized).
    pub component_scales: Vec<f64>,
    pub clusters: ClusterModel,
    pub coefficients: HeteroCoefficients,
}

impl HeteroModel {
    /// Cluster-space coordinates of rows of `x`.
    pub fn embed(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.basis.transform(x);
        for (j, s) in self.component_scales.iter().enumerate() {
            z.column_mut(j).apply(|v| *v /= s);
        }
        z
    }

    pub fn psi(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        psi_matrix(&self.embed(x), &self.clusters)
    }
}

/// Fits PCA and K-means on the kept sample, scores every customer and runs
/// the interacted final stage. Returns the model and the N x K score matrix.
pub fn fit_hetero_model(
    ds: &Dataset,
    cf: &CrossFitResult,
    ws: &WeightedSample,
    opts: &HeteroOptions,
) -> Result<(HeteroModel, DMatrix<f64>)> {
    if opts.k < 2 {
        return Err(Error::Argument(format!("need at least 2 clusters, got {}", opts.k)));
    }
    let x_kept = ds.features().select_rows(ws.kept_indices.iter());
    let basis = fit_pca(&x_kept, opts.selection, opts.standardize_features)?;
    let component_scales: Vec<f64> = basis
        .eigenvalues
        .iter()
        .map(|&ev| if opts.standardize_components && ev > 0.0 { ev.sqrt() } else { 1.0 })
        .collect();
    let mut z_kept = basis.transform(&x_kept);
    for (j, s) in component_scales.iter().enumerate() {
        z_kept.column_mut(j).apply(|v| *v /= s);
    }
    let clusters = fit_kmeans(&z_kept, opts.k, opts.seed, opts.max_iter, opts.n_init)?;
    let mut model = HeteroModel {
        basis,
        component_scales,
        clusters,
        coefficients: HeteroCoefficients {
            beta: Vec::new(),
            cov_hc: DMatrix::zeros(0, 0),
            cov_homoscedastic: DMatrix::zeros(0, 0),
            n_used: 0,
            rank: 0,
        },
    };
    let psi = model.psi(ds.features());
    model.coefficients = fit_hetero_stage(cf, ws, &psi)?;
    Ok((model, psi))
}

/// Effect estimate for one customer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerEffect {
    pub customer_id: String,
    pub h: f64,
    pub var_h: f64,
    pub var_h_homoscedastic: f64,
    pub ci: (f64, f64),
    pub psi: Vec<f64>,
}

impl CustomerEffect {
    pub fn se(&self) -> f64 {
        self.var_h.sqrt()
    }

    pub fn ci_crosses_zero(&self) -> bool {
        self.ci.0 <= 0.0 && self.ci.1 >= 0.0
    }
}

/// `psi' cov psi`.
pub fn quadratic_form(psi: &[f64], cov: &DMatrix<f64>) -> f64 {
    let k = psi.len();
    let mut acc = 0.0;
    for a in 0..k {
        let mut row = 0.0;
        for b in 0..k {
            row += cov[(a, b)] * psi[b];
        }
        acc += psi[a] * row;
    }
    acc.max(0.0)
}

/// Per-customer `h = psi . beta`, its variance and confidence interval (HC flavour).
pub fn customer_effects(
    coef: &HeteroCoefficients,
    psi: &DMatrix<f64>,
    customer_ids: &[String],
    level: f64,
) -> Result<Vec<CustomerEffect>> {
    let k = coef.beta.len();
    if psi.ncols() != k || psi.nrows() != customer_ids.len() {
        return Err(Error::Argument("score matrix does not match coefficients or ids".into()));
    }
    (0..psi.nrows())
        .map(|i| {
            let row: Vec<f64> = psi.row(i).iter().copied().collect();
            let h: f64 = row.iter().zip(&coef.beta).map(|(p, b)| p * b).sum();
            let var_h = quadratic_form(&row, &coef.cov_hc);
            Ok(CustomerEffect {
                customer_id: customer_ids[i].clone(),
                h,
                var_h,
                var_h_homoscedastic: quadratic_form(&row, &coef.cov_homoscedastic),
                ci: normal_ci(h, var_h, level)?,
                psi: row,
            })
        })
        .collect()
}

/// Equal-width histogram of customer effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !lo.is_finite() || !hi.is_finite() {
        return Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        };
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

/// Aggregate view of customer effects over a reporting population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroSummary {
    pub k: usize,
    pub n_components: usize,
    pub explained_variance: f64,
    pub beta: Vec<f64>,
    pub population: String,
    pub n_reported: usize,
    pub mean_h: f64,
    pub weighted_mean_h: f64,
    pub pct_ci_crossing_zero: f64,
    pub histogram: Histogram,
}

/// Summarizes effects over kept customers; treated only unless `include_controls`.
pub fn summarize_effects(
    model: &HeteroModel,
    effects: &[CustomerEffect],
    ws: &WeightedSample,
    treatment: &[u8],
    include_controls: bool,
) -> HeteroSummary {
    let mut hs = Vec::new();
    let mut ws_h = 0.0;
    let mut ws_w = 0.0;
    let mut crossing = 0usize;
    for (r, &i) in ws.kept_indices.iter().enumerate() {
        if !include_controls && treatment[i] != 1 {
            continue;
        }
        let e = &effects[i];
        hs.push(e.h);
        ws_h += ws.weights[r] * e.h;
        ws_w += ws.weights[r];
        if e.ci_crosses_zero() {
            crossing += 1;
        }
    }
    let n = hs.len();
    HeteroSummary {
        k: model.clusters.k,
        n_components: model.basis.n_components(),
        explained_variance: model.basis.explained_variance_ratio.iter().sum(),
        beta: model.coefficients.beta.clone(),
        population: if include_controls { "kept" } else { "kept_treated" }.to_string(),
        n_reported: n,
        mean_h: crate::linalg::mean(&hs),
        weighted_mean_h: ws_h / ws_w,
        pct_ci_crossing_zero: 100.0 * crossing as f64 / n.max(1) as f64,
        histogram: histogram(&hs, 20),
    }
}
