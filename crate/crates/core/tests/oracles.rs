//! Numerical routines checked against independent oracles: exact rational
//! arithmetic, dense matrix products, and brute-force optimality probes.

mod common;

use causal_dml::final_stage::{sandwich_variance, weighted_ols_scalar};
use causal_dml::hetero::kmeans::fit_kmeans;
use causal_dml::hetero::pca::{fit_pca, ComponentSelection};
use causal_dml::hetero::{customer_effects, quadratic_form, weighted_regression};
use causal_dml::nuisance::logistic::{fit_logistic, penalized_log_likelihood, IrlsOptions};
use causal_dml::nuisance::ridge::fit_ridge;
use common::{rel_err, rng, uniform_matrix, uniform_vec};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;

fn q(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Gauss-Jordan elimination over the rationals; `a` is square and nonsingular.
fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).expect("nonsingular");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = BigRational::one() / a[col][col].clone();
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() * inv.clone();
            for c in col..n {
                let t = f.clone() * a[col][c].clone();
                a[r][c] -= t;
            }
            let t = f * b[col].clone();
            b[r] -= t;
        }
    }
    (0..n).map(|i| b[i].clone() / a[i][i].clone()).collect()
}

#[test]
fn ridge_matches_rational_normal_equations() {
    let mut r = rng(11);
    let (n, m, lambda) = (50, 5, 0.1);
    let x = uniform_matrix(&mut r, n, m, -3.0, 3.0);
    let y = uniform_vec(&mut r, n, -10.0, 10.0);
    let model = fit_ridge(&x, &y, lambda, false).unwrap();
    let (w, b) = model.raw_coefficients();

    // Unknowns [b, w_1..w_m]; the intercept row and column carry no penalty.
    let p = m + 1;
    let col = |i: usize, j: usize| if j == 0 { BigRational::one() } else { q(x[(i, j - 1)]) };
    let mut a = vec![vec![BigRational::zero(); p]; p];
    let mut rhs = vec![BigRational::zero(); p];
    for i in 0..n {
        let yi = q(y[i]);
        for j in 0..p {
            let cj = col(i, j);
            rhs[j] += cj.clone() * yi.clone();
            for k in 0..p {
                a[j][k] += cj.clone() * col(i, k);
            }
        }
    }
    for (j, row) in a.iter_mut().enumerate().skip(1) {
        row[j] += q(lambda);
    }
    let exact = solve_exact(a, rhs);

    assert!((b - exact[0].to_f64().unwrap()).abs() <= 1e-8, "intercept");
    for j in 0..m {
        let want = exact[j + 1].to_f64().unwrap();
        assert!((w[j] - want).abs() <= 1e-8, "coef {j}: {} vs {want}", w[j]);
    }
}

#[test]
fn logistic_solution_beats_random_perturbations() {
    let mut r = rng(5);
    let n = 100;
    let x = DMatrix::from_fn(n, 3, |_, _| r.sample::<f64, _>(StandardNormal));
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let eta = 0.3 + 1.2 * x[(i, 0)] - 0.7 * x[(i, 1)];
            let p = 1.0 / (1.0 + (-eta).exp());
            f64::from(u8::from(r.random::<f64>() < p))
        })
        .collect();
    let model = fit_logistic(&x, &d, 1.0, &IrlsOptions::default()).unwrap();
    assert!(model.converged);
    let best = penalized_log_likelihood(&model, &x, &d);
    for t in 0..1000 {
        let scale = if t % 2 == 0 { 1e-3 } else { 0.1 };
        let mut probe = model.clone();
        probe.intercept += scale * r.sample::<f64, _>(StandardNormal);
        for c in probe.coefficients.iter_mut() {
            *c += scale * r.sample::<f64, _>(StandardNormal);
        }
        assert!(penalized_log_likelihood(&probe, &x, &d) <= best + 1e-12, "probe {t} improved");
    }
}

#[test]
fn scalar_wls_matches_rational_oracle() {
    let mut r = rng(17);
    let n = 200;
    let y = uniform_vec(&mut r, n, -5.0, 5.0);
    let d = uniform_vec(&mut r, n, -1.0, 1.0);
    let w = uniform_vec(&mut r, n, 0.1, 20.0);
    let mut num = BigRational::zero();
    let mut den = BigRational::zero();
    for i in 0..n {
        let wd = q(w[i]) * q(d[i]);
        num += wd.clone() * q(y[i]);
        den += wd * q(d[i]);
    }
    let want = (num / den).to_f64().unwrap();
    let got = weighted_ols_scalar(&y, &d, &w).unwrap();
    assert!(rel_err(got, want) <= 1e-10, "{got} vs {want}");
}

#[test]
fn scalar_sandwich_matches_dense_product() {
    let mut r = rng(23);
    let n = 500;
    let y = uniform_vec(&mut r, n, -5.0, 5.0);
    let d = uniform_vec(&mut r, n, -1.0, 1.0);
    let w = uniform_vec(&mut r, n, 0.1, 20.0);
    let beta = weighted_ols_scalar(&y, &d, &w).unwrap();
    let (var_homo, var_hc) = sandwich_variance(&y, &d, &w, beta).unwrap();

    let dm = DMatrix::from_column_slice(n, 1, &d);
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
    let bread = (dm.transpose() * &wm * &dm).try_inverse().unwrap();
    let h = bread * dm.transpose() * &wm;
    let u2: Vec<f64> = (0..n).map(|i| (y[i] - d[i] * beta).powi(2)).collect();
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&u2));
    let want_hc = (&h * sigma * h.transpose())[(0, 0)];
    let s2 = u2.iter().zip(&w).map(|(u, w)| u * w).sum::<f64>() / w.iter().sum::<f64>();
    let want_homo = s2 * (&h * h.transpose())[(0, 0)];
    assert!(rel_err(var_hc, want_hc) <= 1e-10);
    assert!(rel_err(var_homo, want_homo) <= 1e-10);
}

#[test]
fn interacted_regression_matches_dense_gls() {
    let mut r = rng(29);
    let (n, k) = (300, 4);
    let x = uniform_matrix(&mut r, n, k, -1.0, 1.0);
    let y = uniform_vec(&mut r, n, -3.0, 3.0);
    let w = uniform_vec(&mut r, n, 0.2, 5.0);
    let fit = weighted_regression(&y, &x, &w, false).unwrap();

    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
    let yv = DVector::from_column_slice(&y);
    let bread = (x.transpose() * &wm * &x).try_inverse().unwrap();
    let beta = &bread * x.transpose() * &wm * &yv;
    let u = &yv - &x * &beta;
    let sigma = DMatrix::from_diagonal(&u.map(|v| v * v));
    let h = &bread * x.transpose() * &wm;
    let cov = &h * sigma * h.transpose();
    for a in 0..k {
        assert!((fit.beta[a] - beta[a]).abs() <= 1e-9 * beta[a].abs().max(1.0));
        for b in 0..k {
            assert!((fit.cov_hc[(a, b)] - cov[(a, b)]).abs() <= 1e-9 * cov[(a, b)].abs().max(1e-3));
        }
    }
}

#[test]
fn customer_variance_is_the_quadratic_form() {
    let mut r = rng(31);
    let k = 6;
    let a = uniform_matrix(&mut r, k, k, -1.0, 1.0);
    let cov = &a * a.transpose();
    let psi = DMatrix::from_fn(25, k, |_, _| r.random_range(0.0..1.0));
    let coef = causal_dml::hetero::HeteroCoefficients {
        beta: uniform_vec(&mut r, k, -2.0, 2.0),
        cov_hc: cov.clone(),
        cov_homoscedastic: cov.clone(),
        n_used: 100,
        rank: k,
    };
    let ids: Vec<String> = (0..25).map(|i| format!("c{i}")).collect();
    let effects = customer_effects(&coef, &psi, &ids, 0.95).unwrap();
    for (i, e) in effects.iter().enumerate() {
        let row = psi.row(i).transpose();
        let want = (row.transpose() * &cov * &row)[(0, 0)];
        assert!((e.var_h - want).abs() <= 1e-12 * want.max(1.0));
        let slice: Vec<f64> = row.iter().copied().collect();
        assert!((quadratic_form(&slice, &cov) - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn pca_reconstruction_error_equals_discarded_eigenvalues() {
    let mut r = rng(37);
    let (n, m) = (500, 40);
    // Correlated columns so the spectrum is not flat.
    let base = DMatrix::from_fn(n, m, |_, _| r.sample::<f64, _>(StandardNormal));
    let mix = DMatrix::from_fn(m, m, |i, j| if i <= j { 1.0 / (1.0 + (j - i) as f64) } else { 0.0 });
    let x = base * mix;
    let basis = fit_pca(&x, ComponentSelection::TargetVariance(0.8), false).unwrap();
    let rr = basis.n_components();
    assert!(rr < m);

    let z = basis.scaling.transform(&x);
    let recon = basis.transform(&x) * basis.components.transpose();
    let err = (&z - recon).norm_squared() / (n as f64 - 1.0);

    let cov = z.tr_mul(&z) / (n as f64 - 1.0);
    let mut eig: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let discarded: f64 = eig[rr..].iter().sum();
    assert!(rel_err(err, discarded) <= 1e-6, "{err} vs {discarded}");
    let kept: f64 = basis.explained_variance_ratio.iter().sum();
    assert!(kept >= 0.8 - 1e-12);
}

#[test]
fn pca_scores_are_rotation_invariant() {
    let mut r = rng(41);
    let x = DMatrix::from_fn(200, 5, |i, j| r.sample::<f64, _>(StandardNormal) * (j + 1) as f64 + (i % 3) as f64);
    // Random orthogonal rotation of the feature space.
    let g = DMatrix::from_fn(5, 5, |_, _| r.sample::<f64, _>(StandardNormal));
    let rot = g.qr().q();
    let a = fit_pca(&x, ComponentSelection::Fixed(3), false).unwrap();
    let b = fit_pca(&(&x * &rot), ComponentSelection::Fixed(3), false).unwrap();
    for (ea, eb) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!(rel_err(*ea, *eb) <= 1e-9);
    }
    let sa = a.transform(&x);
    let sb = b.transform(&(&x * &rot));
    for c in 0..3 {
        // Axes are defined up to sign.
        let dot: f64 = sa.column(c).dot(&sb.column(c));
        let sign = dot.signum();
        let diff = (sa.column(c) - sb.column(c) * sign).amax();
        assert!(diff <= 1e-8, "component {c} differs by {diff}");
    }
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 12.0]];
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let per = 100;
        let z = DMatrix::from_fn(3 * per, 2, |i, j| centers[i / per][j] + 0.1 * r.sample::<f64, _>(StandardNormal));
        let model = fit_kmeans(&z, 3, seed, 300, 10).unwrap();
        for c in &centers {
            let nearest = (0..3)
                .map(|k| ((model.centroids[(k, 0)] - c[0]).powi(2) + (model.centroids[(k, 1)] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.1, "seed {seed}: centre {c:?} missed by {nearest}");
        }
    }
}

#[test]
fn rational_oracle_solves_small_system() {
    // 2x + y = 3, x - y = 0
    let a = vec![
        vec![q(2.0), q(1.0)],
        vec![q(1.0), q(-1.0)],
    ];
    let s = solve_exact(a, vec![q(3.0), q(0.0)]);
    assert_eq!(s, vec![BigRational::from_integer(BigInt::from(1)); 2]);
}
