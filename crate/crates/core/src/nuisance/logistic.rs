use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, FeatureScaling};
use crate::nuisance::ridge::two_way_split;

/// Probabilities are kept this far away from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-12;

/// L2-penalized logistic regression fitted by IRLS.
///
/// The objective is `sum_i [d_i eta_i - log(1 + exp(eta_i))] - l2/2 * ||w||^2`
/// with an unpenalized intercept. Coefficients are on the transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub scaling: FeatureScaling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub standardize: bool,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 100,
            tol: 1e-8,
            standardize: true,
        }
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let z = self.scaling.transform(x);
        let w = DVector::from_column_slice(&self.coefficients);
        (z * w)
            .iter()
            .map(|eta| clamp_prob(sigmoid(eta + self.intercept)))
            .collect()
    }
}

/// Design with a leading column of ones over the active transformed features.
struct Design {
    scaling: FeatureScaling,
    active: Vec<usize>,
    z: DMatrix<f64>,
}

impl Design {
    fn new(x: &DMatrix<f64>, standardize: bool) -> Self {
        let scaling = FeatureScaling::fit(x, standardize);
        let active: Vec<usize> = (0..x.ncols()).filter(|&j| scaling.active[j]).collect();
        let t = scaling.transform(x).select_columns(&active);
        let mut z = DMatrix::from_element(x.nrows(), active.len() + 1, 1.0);
        z.columns_mut(1, active.len()).copy_from(&t);
        Design { scaling, active, z }
    }

    fn objective(&self, beta: &DVector<f64>, d: &[f64], l2: f64) -> f64 {
        let eta = &self.z * beta;
        let ll: f64 = eta
            .iter()
            .zip(d)
            .map(|(&e, &di)| di * e - softplus(e))
            .sum();
        let pen: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        ll - 0.5 * l2 * pen
    }

    fn fit(&self, d: &[f64], l2: f64, opts: &IrlsOptions, start: Option<&DVector<f64>>) -> LogisticModel {
        let p = self.z.ncols();
        let n = self.z.nrows();
        let mut beta = match start {
            Some(b) => b.clone(),
            None => {
                let rate = clamp_prob(d.iter().sum::<f64>() / n as f64);
                let mut b = DVector::zeros(p);
                b[0] = (rate / (1.0 - rate)).ln();
                b
            }
        };
        let mut obj = self.objective(&beta, d, l2);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let eta = &self.z * &beta;
            let probs: Vec<f64> = eta.iter().map(|&e| clamp_prob(sigmoid(e))).collect();
            let mut grad_resid = DVector::zeros(n);
            let mut weighted = self.z.clone();
            for i in 0..n {
                grad_resid[i] = d[i] - probs[i];
                let s = (probs[i] * (1.0 - probs[i])).sqrt();
                weighted.row_mut(i).scale_mut(s);
            }
            let mut grad = self.z.tr_mul(&grad_resid);
            let mut hess = weighted.tr_mul(&weighted);
            for k in 1..p {
                grad[k] -= l2 * beta[k];
                hess[(k, k)] += l2;
            }
            let step = match newton_direction(&hess, &grad) {
                Some(s) => s,
                None => break,
            };
            // Newton decrement below the objective's rounding level counts as
            // converged; otherwise the line search can stall on noise.
            let decrement = 0.5 * grad.dot(&step);
            if step.amax() < opts.tol || decrement <= 1e-13 * (1.0 + obj.abs()) {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-10 {
                let trial = &beta + &step * t;
                let trial_obj = self.objective(&trial, d, l2);
                if trial_obj.is_finite() && trial_obj >= obj {
                    beta = trial;
                    obj = trial_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let mut coefficients = vec![0.0; self.scaling.n_features()];
        for (k, &j) in self.active.iter().enumerate() {
            coefficients[j] = beta[k + 1];
        }
        LogisticModel {
            coefficients,
            intercept: beta[0],
            l2,
            converged,
            iterations,
            scaling: self.scaling.clone(),
        }
    }
}

/// Newton direction; adds a growing diagonal jitter when the Hessian is
/// numerically singular (near-separable data with no penalty).
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(s) = solve_spd(hess, grad) {
        return Some(s);
    }
    let scale = hess.diagonal().amax().max(1e-300);
    let mut jitter = scale * 1e-12;
    for _ in 0..12 {
        let mut h = hess.clone();
        for k in 0..h.nrows() {
            h[(k, k)] += jitter;
        }
        if let Some(s) = solve_spd(&h, grad) {
            return Some(s);
        }
        jitter *= 100.0;
    }
    None
}

fn beta_of(model: &LogisticModel, active: &[usize]) -> DVector<f64> {
    let mut b = DVector::zeros(active.len() + 1);
    b[0] = model.intercept;
    for (k, &j) in active.iter().enumerate() {
        b[k + 1] = model.coefficients[j];
    }
    b
}

fn check_inputs(x: &DMatrix<f64>, d: &[f64], l2: f64) -> Result<()> {
    if x.nrows() != d.len() || d.is_empty() {
        return Err(Error::Argument("feature rows and labels differ in length".into()));
    }
    if d.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument("logistic labels must be 0 or 1".into()));
    }
    let ones = d.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == d.len() {
        return Err(Error::Estimation("logistic regression needs both classes".into()));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::Argument(format!("l2 must be finite and >= 0, got {l2}")));
    }
    Ok(())
}

pub fn fit_logistic(x: &DMatrix<f64>, d: &[f64], l2: f64, opts: &IrlsOptions) -> Result<LogisticModel> {
    check_inputs(x, d, l2)?;
    Ok(Design::new(x, opts.standardize).fit(d, l2, opts, None))
}

/// Penalized log-likelihood of a fitted model on `(x, d)` under its own scaling.
pub fn penalized_log_likelihood(model: &LogisticModel, x: &DMatrix<f64>, d: &[f64]) -> f64 {
    let z = model.scaling.transform(x);
    let w = DVector::from_column_slice(&model.coefficients);
    let eta = z * w;
    let ll: f64 = eta
        .iter()
        .zip(d)
        .map(|(&e, &di)| {
            let e = e + model.intercept;
            di * e - softplus(e)
        })
        .sum();
    ll - 0.5 * model.l2 * model.coefficients.iter().map(|c| c * c).sum::<f64>()
}

/// Chooses `l2` by out-of-half log-loss over a seeded 2-fold split.
///
/// The grid is walked from the strongest penalty down with warm starts.
pub fn select_logistic_l2(
    x: &DMatrix<f64>,
    d: &[f64],
    grid: &[f64],
    opts: &IrlsOptions,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Argument("empty l2 grid".into()));
    }
    let (a, b) = two_way_split(x.nrows(), seed);
    let mut losses = vec![0.0; grid.len()];
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid[j].total_cmp(&grid[i]));
    for (train, test) in [(&a, &b), (&b, &a)] {
        let dt: Vec<f64> = train.iter().map(|&i| d[i]).collect();
        let ones = dt.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == dt.len() {
            return Err(Error::Estimation("l2 search split lost a treatment class".into()));
        }
        let design = Design::new(&x.select_rows(train.iter()), opts.standardize);
        let xv = x.select_rows(test.iter());
        let mut warm: Option<DVector<f64>> = None;
        for &g in &order {
            let model = design.fit(&dt, grid[g], opts, warm.as_ref());
            warm = Some(beta_of(&model, &design.active));
            let loss: f64 = model
                .predict_proba(&xv)
                .iter()
                .zip(test.iter())
                .map(|(&p, &i)| -(d[i] * p.ln() + (1.0 - d[i]) * (1.0 - p).ln()))
                .sum();
            losses[g] += loss;
        }
    }
    let best = (0..grid.len())
        .min_by(|&i, &j| losses[i].total_cmp(&losses[j]).then(i.cmp(&j)))
        .expect("grid non-empty");
    Ok((grid[best], losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_recovers_base_rate() {
        let n = 100;
        let x = DMatrix::zeros(n, 1);
        let d: Vec<f64> = (0..n).map(|i| if i < 30 { 1.0 } else { 0.0 }).collect();
        for l2 in [0.0, 1.0] {
            let m = fit_logistic(&x, &d, l2, &IrlsOptions::default()).unwrap();
            assert!(m.converged);
            for p in m.predict_proba(&x) {
                assert!((p - 0.3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn label_flip_negates_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 150;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
        let d: Vec<f64> = (0..n)
            .map(|i| {
                let p = sigmoid(0.8 * x[(i, 0)] - 0.5 * x[(i, 2)] + 0.2);
                if rng.random::<f64>() < p { 1.0 } else { 0.0 }
            })
            .collect();
        let flipped: Vec<f64> = d.iter().map(|v| 1.0 - v).collect();
        let opts = IrlsOptions::default();
        let a = fit_logistic(&x, &d, 0.5, &opts).unwrap();
        let b = fit_logistic(&x, &flipped, 0.5, &opts).unwrap();
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((ca + cb).abs() < 1e-8);
        }
        assert!((a.intercept + b.intercept).abs() < 1e-8);
    }

    #[test]
    fn separable_without_penalty_does_not_diverge() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let d = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic(&x, &d, 0.0, &IrlsOptions::default()).unwrap();
        assert!(!m.converged);
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
        for p in m.predict_proba(&x) {
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = DMatrix::zeros(3, 1);
        assert!(fit_logistic(&x, &[1.0, 1.0, 1.0], 1.0, &IrlsOptions::default()).is_err());
    }
}
