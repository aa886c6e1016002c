use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, solve_spd, FeatureScaling};

/// Ridge regression with an unpenalized intercept.
///
/// Coefficients live on the transformed feature scale held by `scaling`;
/// [`RidgeModel::raw_coefficients`] maps them back to the input scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub scaling: FeatureScaling,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let z = self.scaling.transform(x);
        let w = DVector::from_column_slice(&self.coefficients);
        (z * w).iter().map(|v| v + self.intercept).collect()
    }

    /// `(coefficients, intercept)` on the original feature scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let s = &self.scaling;
        let w: Vec<f64> = (0..s.n_features())
            .map(|j| {
                if s.active[j] {
                    self.coefficients[j] / s.scales[j]
                } else {
                    0.0
                }
            })
            .collect();
        let shift: f64 = (0..w.len()).map(|j| w[j] * s.means[j]).sum();
        (w, self.intercept - shift)
    }
}

/// Sufficient statistics of a centered training set, reusable across penalties.
struct Gram {
    scaling: FeatureScaling,
    active: Vec<usize>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    y_mean: f64,
}

impl Gram {
    fn new(x: &DMatrix<f64>, y: &[f64], standardize: bool) -> Self {
        let scaling = FeatureScaling::fit(x, standardize);
        let active: Vec<usize> = (0..x.ncols()).filter(|&j| scaling.active[j]).collect();
        let z = scaling.transform(x).select_columns(&active);
        let y_mean = mean(y);
        let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
        let xtx = z.tr_mul(&z);
        let xty = z.tr_mul(&yc);
        Gram {
            scaling,
            active,
            xtx,
            xty,
            y_mean,
        }
    }

    fn solve(&self, lambda: f64) -> Result<RidgeModel> {
        let m = self.scaling.n_features();
        let mut a = self.xtx.clone();
        for k in 0..a.nrows() {
            a[(k, k)] += lambda;
        }
        let w_active = if a.nrows() == 0 {
            DVector::zeros(0)
        } else {
            solve_spd(&a, &self.xty).ok_or_else(|| {
                Error::Numerical(format!(
                    "ridge normal equations are singular at lambda = {lambda}; use lambda > 0"
                ))
            })?
        };
        let mut coefficients = vec![0.0; m];
        for (k, &j) in self.active.iter().enumerate() {
            coefficients[j] = w_active[k];
        }
        Ok(RidgeModel {
            coefficients,
            intercept: self.y_mean,
            lambda,
            scaling: self.scaling.clone(),
        })
    }
}

/// Minimizes `||y - X w - b||^2 + lambda ||w||^2` in closed form.
pub fn fit_ridge(x: &DMatrix<f64>, y: &[f64], lambda: f64, standardize: bool) -> Result<RidgeModel> {
    if x.nrows() < 2 || x.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "ridge needs at least 2 rows and matching lengths ({} rows, {} targets)",
            x.nrows(),
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Gram::new(x, y, standardize).solve(lambda)
}

/// Splits `n` rows into two seeded halves for nested validation.
pub(crate) fn two_way_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = order.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Picks the penalty with the lowest out-of-half squared error over a 2-fold split.
///
/// Ties go to the earlier grid entry. Returns the chosen value and the loss per grid point.
pub fn select_ridge_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
    standardize: bool,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Argument("empty lambda grid".into()));
    }
    let (a, b) = two_way_split(x.nrows(), seed);
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Argument("too few rows for lambda search".into()));
    }
    let mut losses = vec![0.0; grid.len()];
    for (train, test) in [(&a, &b), (&b, &a)] {
        let xt = x.select_rows(train.iter());
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(test.iter());
        let gram = Gram::new(&xt, &yt, standardize);
        for (g, &lambda) in grid.iter().enumerate() {
            let loss = match gram.solve(lambda) {
                Ok(model) => model
                    .predict(&xv)
                    .iter()
                    .zip(test.iter())
                    .map(|(p, &i)| (y[i] - p).powi(2))
                    .sum::<f64>(),
                Err(_) => f64::INFINITY,
            };
            losses[g] += loss;
        }
    }
    let best = (0..grid.len())
        .min_by(|&i, &j| losses[i].total_cmp(&losses[j]).then(i.cmp(&j)))
        .expect("grid non-empty");
    if !losses[best].is_finite() {
        return Err(Error::Numerical("every lambda in the grid failed".into()));
    }
    Ok((grid[best], losses))
}
