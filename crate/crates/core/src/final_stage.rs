//! Final DML stage: IPW-weighted regression of the outcome residual on the
//! treatment residual, with closed-form sandwich variances.
//!
//! With `H = (D'WD)^-1 D'W` and `Sigma = diag(u_p^2)`, the heteroscedastic
//! variance is `H Sigma H'`. The homoscedastic flavour replaces every `u_p^2`
//! by the weighted mean squared residual `sum(w u^2) / sum(w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum_by, z_critical};
use crate::nuisance::CrossFitResult;
use crate::weighting::{EstimandSpec, WeightedSample};

/// Scalar treatment effect with both variance flavours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub beta: f64,
    pub var_homoscedastic: f64,
    pub var_hc: f64,
    pub ci_homoscedastic: (f64, f64),
    pub ci_hc: (f64, f64),
    pub n_used: usize,
    pub level: f64,
    pub estimand: EstimandSpec,
}

impl AttEstimate {
    pub fn se_homoscedastic(&self) -> f64 {
        self.var_homoscedastic.sqrt()
    }

    pub fn se_hc(&self) -> f64 {
        self.var_hc.sqrt()
    }

    pub fn width_hc(&self) -> f64 {
        self.ci_hc.1 - self.ci_hc.0
    }

    pub fn width_homoscedastic(&self) -> f64 {
        self.ci_homoscedastic.1 - self.ci_homoscedastic.0
    }
}

fn check_lengths(y: &[f64], d: &[f64], w: &[f64]) -> Result<()> {
    if y.len() != d.len() || y.len() != w.len() {
        return Err(Error::Argument("residual and weight vectors differ in length".into()));
    }
    if y.len() < 2 {
        return Err(Error::Argument("final stage needs at least 2 observations".into()));
    }
    Ok(())
}

/// `beta = sum(w d y) / sum(w d^2)`, no intercept.
pub fn weighted_ols_scalar(y_res: &[f64], d_res: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(y_res, d_res, w)?;
    let sdd = pairwise_sum_by(w.len(), |p| w[p] * d_res[p] * d_res[p]);
    if !(sdd > 0.0) {
        return Err(Error::Estimation(
            "degenerate treatment residuals: weighted sum of squares is zero".into(),
        ));
    }
    let sdy = pairwise_sum_by(w.len(), |p| w[p] * d_res[p] * y_res[p]);
    Ok(sdy / sdd)
}

/// Returns `(var_homoscedastic, var_hc)` for the scalar weighted regression.
pub fn sandwich_variance(y_res: &[f64], d_res: &[f64], w: &[f64], beta: f64) -> Result<(f64, f64)> {
    check_lengths(y_res, d_res, w)?;
    let n = w.len();
    let sdd = pairwise_sum_by(n, |p| w[p] * d_res[p] * d_res[p]);
    if !(sdd > 0.0) {
        return Err(Error::Estimation(
            "degenerate treatment residuals: weighted sum of squares is zero".into(),
        ));
    }
    let u2: Vec<f64> = (0..n)
        .map(|p| {
            let u = y_res[p] - d_res[p] * beta;
            u * u
        })
        .collect();
    let h2 = |p: usize| {
        let h = w[p] * d_res[p] / sdd;
        h * h
    };
    let var_hc = pairwise_sum_by(n, |p| h2(p) * u2[p]);
    let sigma2 = pairwise_sum_by(n, |p| w[p] * u2[p]) / pairwise_sum_by(n, |p| w[p]);
    let var_homo = sigma2 * pairwise_sum_by(n, h2);
    Ok((var_homo, var_hc))
}

/// Weighted regression of `y` on `[1, d]`; returns `(slope, var_homoscedastic, var_hc)`.
fn with_intercept(y: &[f64], d: &[f64], w: &[f64]) -> Result<(f64, f64, f64)> {
    let n = w.len();
    let s0 = pairwise_sum_by(n, |p| w[p]);
    let s1 = pairwise_sum_by(n, |p| w[p] * d[p]);
    let s2 = pairwise_sum_by(n, |p| w[p] * d[p] * d[p]);
    let t0 = pairwise_sum_by(n, |p| w[p] * y[p]);
    let t1 = pairwise_sum_by(n, |p| w[p] * d[p] * y[p]);
    let det = s0 * s2 - s1 * s1;
    if !(det > 1e-12 * s0 * s2) {
        return Err(Error::Estimation(
            "degenerate treatment residuals: no variation after centering".into(),
        ));
    }
    let slope = (s0 * t1 - s1 * t0) / det;
    let icpt = (s2 * t0 - s1 * t1) / det;
    // Slope row of (X'WX)^-1 X'W is w_p (s0 d_p - s1) / det.
    let u2: Vec<f64> = (0..n).map(|p| (y[p] - icpt - slope * d[p]).powi(2)).collect();
    let h2 = |p: usize| (w[p] * (s0 * d[p] - s1) / det).powi(2);
    let var_hc = pairwise_sum_by(n, |p| h2(p) * u2[p]);
    let sigma2 = pairwise_sum_by(n, |p| w[p] * u2[p]) / s0;
    let var_homo = sigma2 * pairwise_sum_by(n, h2);
    Ok((slope, var_homo, var_hc))
}

pub fn normal_ci(estimate: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    let half = z_critical(level)? * variance.sqrt();
    Ok((estimate - half, estimate + half))
}

/// Runs the weighted residual regression on the kept sample.
pub fn estimate_att(
    cf: &CrossFitResult,
    ws: &WeightedSample,
    level: f64,
    intercept: bool,
) -> Result<AttEstimate> {
    if ws.kept_indices.iter().any(|&i| i >= cf.n()) {
        return Err(Error::Argument("weighted sample does not match cross-fit result".into()));
    }
    let y: Vec<f64> = ws.kept_indices.iter().map(|&i| cf.y_res[i]).collect();
    let d: Vec<f64> = ws.kept_indices.iter().map(|&i| cf.d_res[i]).collect();
    let (beta, var_homo, var_hc) = if intercept {
        with_intercept(&y, &d, &ws.weights)?
    } else {
        let beta = weighted_ols_scalar(&y, &d, &ws.weights)?;
        let (vh, vhc) = sandwich_variance(&y, &d, &ws.weights, beta)?;
        (beta, vh, vhc)
    };
    Ok(AttEstimate {
        beta,
        var_homoscedastic: var_homo,
        var_hc,
        ci_homoscedastic: normal_ci(beta, var_homo, level)?,
        ci_hc: normal_ci(beta, var_hc, level)?,
        n_used: y.len(),
        level,
        estimand: ws.spec,
    })
}
