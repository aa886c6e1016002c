use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::FeatureScaling;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentSelection {
    /// Smallest count whose cumulative explained variance reaches the fraction.
    TargetVariance(f64),
    Fixed(usize),
}

/// Principal axes of the (centered, optionally standardized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub scaling: FeatureScaling,
    /// M x R, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Variances along the retained axes, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Ratio for every axis, not only the retained ones.
    pub full_explained_variance_ratio: Vec<f64>,
}

/// Explained-variance curve row, as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedVariance {
    pub component: usize,
    pub ratio: f64,
    pub cumulative: f64,
}

impl PcaBasis {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// Projects rows of `x` onto the retained axes.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.scaling.transform(x) * &self.components
    }

    pub fn explained_variance_curve(&self) -> Vec<ExplainedVariance> {
        let mut cum = 0.0;
        self.full_explained_variance_ratio
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                cum += r;
                ExplainedVariance {
                    component: i + 1,
                    ratio: r,
                    cumulative: cum,
                }
            })
            .collect()
    }
}

pub fn fit_pca(x: &DMatrix<f64>, selection: ComponentSelection, standardize: bool) -> Result<PcaBasis> {
    let (n, m) = x.shape();
    if n < 2 || m == 0 {
        return Err(Error::Argument(format!("PCA needs at least 2 rows and 1 column, got {n}x{m}")));
    }
    let scaling = FeatureScaling::fit(x, standardize);
    let z = scaling.transform(x);
    let cov = z.tr_mul(&z) / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("feature matrix has zero variance".into()));
    }
    let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();

    let r = match selection {
        ComponentSelection::TargetVariance(t) => {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Argument(format!("target variance must lie in (0, 1], got {t}")));
            }
            let mut cum = 0.0;
            let mut r = m;
            for (i, ratio) in ratios.iter().enumerate() {
                cum += ratio;
                if cum >= t - 1e-12 {
                    r = i + 1;
                    break;
                }
            }
            r
        }
        ComponentSelection::Fixed(r) => {
            if r == 0 || r > n.min(m) {
                return Err(Error::Argument(format!(
                    "component count must lie in [1, {}], got {r}",
                    n.min(m)
                )));
            }
            r
        }
    };

    let mut components = DMatrix::zeros(m, r);
    for (c, &k) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Sign convention: largest-magnitude loading is positive.
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, x)| {
            if x.abs() > bv { (i, x.abs()) } else { (bi, bv) }
        });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        components.set_column(c, &v);
    }
    Ok(PcaBasis {
        scaling,
        components,
        eigenvalues: values[..r].to_vec(),
        explained_variance_ratio: ratios[..r].to_vec(),
        full_explained_variance_ratio: ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_two_matrix_is_explained_by_two_components() {
        let n = 40;
        let x = DMatrix::from_fn(n, 4, |i, j| {
            let a = (i as f64 * 0.37).sin();
            let b = (i as f64 * 0.11).cos() * 2.0;
            match j {
                0 => a,
                1 => b,
                2 => a + b,
                _ => 2.0 * a - b,
            }
        });
        let basis = fit_pca(&x, ComponentSelection::TargetVariance(1.0), false).unwrap();
        assert_eq!(basis.n_components(), 2);
        let cum: f64 = basis.explained_variance_ratio.iter().sum();
        assert!((cum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn components_are_orthonormal() {
        let x = DMatrix::from_fn(30, 5, |i, j| ((i * 7 + j * 13) % 11) as f64 + (i * j) as f64 * 0.01);
        let basis = fit_pca(&x, ComponentSelection::Fixed(3), true).unwrap();
        let gram = basis.components.tr_mul(&basis.components);
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!(basis
            .explained_variance_ratio
            .windows(2)
            .all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_variance_is_an_error() {
        let x = DMatrix::from_element(5, 3, 2.0);
        assert!(fit_pca(&x, ComponentSelection::TargetVariance(0.8), true).is_err());
    }
}
