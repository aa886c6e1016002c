//! Acceptance criteria. Runs without the default harness so every criterion
//! prints a PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use causal_dml::cli::run_cli;
use causal_dml::config::{parse_config, BaselineConfig, HeteroConfig, OutputsConfig, PipelineConfig};
use causal_dml::data::{assign_folds, Dataset};
use causal_dml::final_stage::{estimate_att, sandwich_variance, weighted_ols_scalar};
use causal_dml::hetero::{customer_effects, psi_matrix, weighted_regression, ClusterModel, HeteroCoefficients};
use causal_dml::linalg::z_critical;
use causal_dml::nuisance::{cross_fit, outcome_learner, propensity_learner, ModelSpec};
use causal_dml::pipeline::{cross_fit_dataset, execute, DmlSettings};
use causal_dml::synth::{generate, DgpSpec, EffectSpec};
use causal_dml::validation::{column, run_ci_width_study, run_coverage_study, run_placebo_study, EstimatorKind, StudySettings};
use causal_dml::weighting::{apply_support_and_trim, ipw_weights, rescale_propensities, Estimand, EstimandSpec};
use common::{rng, uniform_matrix, uniform_vec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Relative error of a matrix against its oracle, in Frobenius norm.
fn mat_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn vec_rel(a: &[f64], b: &[f64]) -> f64 {
    mat_rel(&DMatrix::from_column_slice(a.len(), 1, a), &DMatrix::from_column_slice(b.len(), 1, b))
}

fn random_treatment(r: &mut impl Rng, n: usize) -> Vec<u8> {
    let mut d: Vec<u8> = (0..n).map(|_| u8::from(r.random::<f64>() < 0.4)).collect();
    d[0] = 1;
    d[1] = 0;
    d
}

// 1. Each formula against a dense-arithmetic oracle on random small instances.
fn formulas() -> Outcome {
    const INSTANCES: u64 = 120;
    let mut worst = [0.0f64; 6];
    for t in 0..INSTANCES {
        let mut r = rng(1000 + t);
        let n = r.random_range(8..40);
        let d = random_treatment(&mut r, n);
        let e = uniform_vec(&mut r, n, 0.01, 0.99);

        // IPW weights
        for est in [Estimand::Att, Estimand::Ate] {
            let got = ipw_weights(&e, &d, est).unwrap();
            let want: Vec<f64> = e
                .iter()
                .zip(&d)
                .map(|(&e, &d)| {
                    let d = d as f64;
                    match est {
                        Estimand::Att => d + (1.0 - d) * e / (1.0 - e),
                        Estimand::Ate => d / e + (1.0 - d) / (1.0 - e),
                    }
                })
                .collect();
            worst[0] = worst[0].max(vec_rel(&got, &want));
        }

        // rescaling: e * mean(D) / mean(e), capped below 1
        let got = rescale_propensities(&e, &d).unwrap();
        let d_bar = d.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let e_bar = e.iter().sum::<f64>() / n as f64;
        let want: Vec<f64> = e.iter().map(|v| (v * d_bar / e_bar).min(1.0 - 1e-12)).collect();
        worst[1] = worst[1].max(vec_rel(&got, &want));

        // psi: normalised inverse Euclidean distance to each centroid
        let k = r.random_range(2..8);
        let dim = r.random_range(1..5);
        let z = uniform_matrix(&mut r, n, dim, -3.0, 3.0);
        let centroids = uniform_matrix(&mut r, k, dim, -3.0, 3.0);
        let clusters = ClusterModel {
            centroids: centroids.clone(),
            k,
            inertia: 0.0,
            seed: 0,
            iterations: 0,
        };
        let got = psi_matrix(&z, &clusters);
        let inv = DMatrix::from_fn(n, k, |i, c| 1.0 / (z.row(i) - centroids.row(c)).norm());
        let want = DMatrix::from_fn(n, k, |i, c| inv[(i, c)] / inv.row(i).sum());
        worst[2] = worst[2].max(mat_rel(&got, &want));

        // h = psi beta and Var(h) = diag(psi Cov psi')
        let beta = uniform_vec(&mut r, k, -5.0, 5.0);
        let a = uniform_matrix(&mut r, k, k, -1.0, 1.0);
        let cov = &a * a.transpose();
        let coef = HeteroCoefficients {
            beta: beta.clone(),
            cov_hc: cov.clone(),
            cov_homoscedastic: cov.clone(),
            n_used: n,
            rank: k,
        };
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let effects = customer_effects(&coef, &want, &ids, 0.95).unwrap();
        let h_want = &want * DVector::from_vec(beta);
        let v_want = (&want * &cov * want.transpose()).diagonal();
        let h_got: Vec<f64> = effects.iter().map(|e| e.h).collect();
        let v_got: Vec<f64> = effects.iter().map(|e| e.var_h).collect();
        worst[3] = worst[3].max(vec_rel(&h_got, h_want.as_slice()));
        worst[4] = worst[4].max(vec_rel(&v_got, v_want.as_slice()));

        // sandwich H Sigma H' with H = (X'WX)^-1 X'W and Sigma = diag(u^2)
        let w = uniform_vec(&mut r, n, 0.1, 20.0);
        let y = uniform_vec(&mut r, n, -10.0, 10.0);
        let dres = uniform_vec(&mut r, n, -1.0, 1.0);
        let b = weighted_ols_scalar(&y, &dres, &w).unwrap();
        let (_, var_hc) = sandwich_variance(&y, &dres, &w, b).unwrap();
        let x = DMatrix::from_column_slice(n, 1, &dres);
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
        let h = (x.transpose() * &wm * &x).try_inverse().unwrap() * x.transpose() * &wm;
        let bd = &h * DVector::from_column_slice(&y);
        let u = DVector::from_column_slice(&y) - &x * &bd;
        let sigma = DMatrix::from_diagonal(&u.map(|v| v * v));
        let want = &h * sigma * h.transpose();
        worst[5] = worst[5].max((var_hc - want[(0, 0)]).abs() / want[(0, 0)]);

        let xk = uniform_matrix(&mut r, n.max(k + 2), k, -1.0, 1.0);
        let nk = xk.nrows();
        let yk = uniform_vec(&mut r, nk, -10.0, 10.0);
        let wk = uniform_vec(&mut r, nk, 0.1, 20.0);
        let fit = weighted_regression(&yk, &xk, &wk, false).unwrap();
        let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&wk));
        let h = (xk.transpose() * &wm * &xk).try_inverse().unwrap() * xk.transpose() * &wm;
        let bk = &h * DVector::from_column_slice(&yk);
        let u = DVector::from_column_slice(&yk) - &xk * &bk;
        let want = &h * DMatrix::from_diagonal(&u.map(|v| v * v)) * h.transpose();
        worst[5] = worst[5].max(mat_rel(&fit.cov_hc, &want));
    }
    let names = ["ipw", "rescale", "psi", "h", "var_h", "sandwich"];
    let detail = format!(
        "{INSTANCES} instances, max rel err {}",
        names
            .iter()
            .zip(worst)
            .map(|(n, w)| format!("{n}={w:.1e}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    check(worst.iter().all(|&w| w <= 1e-8), detail)
}

// 2. Bias and HC coverage on the constant-effect design.
fn calibration() -> Outcome {
    let report = run_coverage_study(&common::calibration_spec(0), &StudySettings::default(), 200, 0.95, 2).unwrap();
    let bias = report.aggregates["bias"];
    let coverage = report.aggregates["coverage"];
    check(
        bias.abs() <= 0.1 && (0.90..=0.98).contains(&coverage),
        format!("bias {bias:+.4}, coverage {coverage:.3} over {} reps", report.aggregates["n_ok"]),
    )
}

// 3. Segment means of h and the treated weighted mean against the scalar estimate.
fn heterogeneity() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let spec = common::segment_spec(seed);
        let (_, truth) = generate(&spec).unwrap();
        let out = execute(&PipelineConfig::for_synthetic(spec.clone())).unwrap();
        let effects = out.effects.unwrap();
        let EffectSpec::Segmented { effects: taus, .. } = &spec.effect else {
            unreachable!()
        };
        let mut parts = Vec::new();
        for (s, tau) in taus.iter().enumerate() {
            let hs: Vec<f64> = effects
                .iter()
                .zip(&truth.segment)
                .filter(|(_, &g)| g == s)
                .map(|(e, _)| e.h)
                .collect();
            let mean = hs.iter().sum::<f64>() / hs.len() as f64;
            ok &= (mean - tau).abs() <= 0.5;
            parts.push(format!("seg{s} {mean:.3} (truth {tau})"));
        }
        let wm = out.report.hetero.unwrap().summary.weighted_mean_h;
        let beta = out.report.att.beta;
        ok &= (wm - beta).abs() <= 0.5;
        parts.push(format!("weighted h {wm:.3} vs att {beta:.3}"));
        lines.push(format!("seed {seed}: {}", parts.join(", ")));
    }
    check(ok, lines.join("; "))
}

// 4. Trimming and rescaling narrow the HC interval under heavy propensity tails.
fn trimming_benefit() -> Outcome {
    const REPS: u64 = 100;
    let narrower: Vec<bool> = (0..REPS)
        .into_par_iter()
        .map(|seed| {
            let (ds, _) = generate(&common::heavy_tail_spec(seed)).unwrap();
            let settings = DmlSettings {
                fold_seed: seed,
                ..DmlSettings::default()
            };
            let cf = cross_fit_dataset(&ds, &settings).unwrap();
            let trimmed = apply_support_and_trim(&cf, &EstimandSpec::default()).unwrap();
            let raw = apply_support_and_trim(&cf, &EstimandSpec::unfiltered(Estimand::Att)).unwrap();
            let a = estimate_att(&cf, &trimmed, 0.95, false).unwrap();
            let b = estimate_att(&cf, &raw, 0.95, false).unwrap();
            a.width_hc() < b.width_hc()
        })
        .collect();
    let wins = narrower.iter().filter(|&&w| w).count();
    check(
        wins as f64 >= 0.8 * REPS as f64,
        format!("trim+rescale strictly narrower in {wins}/{REPS} paired reps"),
    )
}

// 5. Placebo coverage of zero, and DML no worse than the baseline on paired seeds.
fn placebo() -> Outcome {
    let settings = StudySettings::default();
    let cov = run_placebo_study(&common::calibration_spec(0), &[EstimatorKind::Dml], &settings, 200, 3).unwrap();
    let rate = cov.aggregates["coverage_zero_dml"];
    let paired = run_placebo_study(
        &common::strong_selection_spec(0),
        &[EstimatorKind::Dml, EstimatorKind::Po],
        &settings,
        20,
        4,
    )
    .unwrap();
    let diff = paired.aggregates["mean_abs_diff_dml_minus_po"];
    check(
        (0.90..=1.00).contains(&rate) && diff <= 0.0 && paired.aggregates["n_pairs"] == 20.0,
        format!(
            "coverage of 0 {rate:.3} over 200 reps; mean |placebo| dml {:.4} vs po {:.4} (diff {diff:+.4}, dml better in {}/20)",
            paired.aggregates["mean_abs_placebo_dml"],
            paired.aggregates["mean_abs_placebo_po"],
            paired.aggregates["n_dml_better"],
        ),
    )
}

// 6. Homoscedastic intervals are no wider than HC ones when the noise scale varies.
fn variance_ordering() -> Outcome {
    let report = run_coverage_study(&common::heteroscedastic_spec(0), &StudySettings::default(), 100, 0.95, 5).unwrap();
    let z = z_critical(0.95).unwrap();
    let mean_width = |key: &str| {
        let se = column(&report.records, key);
        se.iter().map(|s| 2.0 * z * s).sum::<f64>() / se.len() as f64
    };
    let (homo, hc) = (mean_width("se_homoscedastic"), mean_width("se_hc"));
    check(
        homo <= hc && report.failures == 0,
        format!("mean width homoscedastic {homo:.4} vs HC {hc:.4} over {} reps", report.records.len()),
    )
}

// 7. Identical digests from two consecutive runs.
fn determinism() -> Outcome {
    let mut spec = DgpSpec::constant(4000, 8, 2.0, 1.0, 17);
    spec.effect = EffectSpec::Segmented {
        effects: vec![1.0, 3.0],
        separation: 6.0,
    };
    let mut cfg = PipelineConfig::for_synthetic(spec.clone());
    cfg.baseline.enabled = true;
    cfg.baseline.n_bootstrap = 40;
    let a = execute(&cfg).unwrap().report.digest;
    let b = execute(&cfg).unwrap().report.digest;

    let small = spec.with_n(1500);
    let settings = StudySettings::default();
    let both = [EstimatorKind::Dml, EstimatorKind::Po];
    let p1 = run_placebo_study(&small, &both, &settings, 6, 8).unwrap();
    let p2 = run_placebo_study(&small, &both, &settings, 6, 8).unwrap();
    let w1 = run_ci_width_study(&small, &settings, 4, 9).unwrap();
    let w2 = run_ci_width_study(&small, &settings, 4, 9).unwrap();
    let c1 = run_coverage_study(&small, &settings, 50, 0.9, 10).unwrap();
    let c2 = run_coverage_study(&small, &settings, 50, 0.9, 10).unwrap();
    let consistent = [&p1, &w1, &c1].iter().all(|r| r.check_consistency().is_ok());
    check(
        a == b && p1.digest == p2.digest && w1.digest == w2.digest && c1.digest == c2.digest && consistent,
        format!("pipeline digest {}, study digests {} {} {}", &a[..12], &p1.digest[..12], &w1.digest[..12], &c1.digest[..12]),
    )
}

// 8. Perturbing one row never reaches the model that predicts that row.
fn leakage() -> Outcome {
    let om = outcome_learner(&ModelSpec::named("ridge")).unwrap();
    let pm = propensity_learner(&ModelSpec::named("logistic").resolved()).unwrap();
    let mut touched_other_folds = 0;
    for t in 0..20u64 {
        let mut r = rng(500 + t);
        let n = r.random_range(60..150);
        let m = r.random_range(1..6);
        let x = uniform_matrix(&mut r, n, m, -2.0, 2.0);
        let mut d = random_treatment(&mut r, n);
        d[2] = 1;
        d[3] = 0;
        let y = uniform_vec(&mut r, n, -5.0, 5.0);
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
        let ds = Dataset::new(ids.clone(), names.clone(), x.clone(), d.clone(), y.clone()).unwrap();
        let plan = assign_folds(n, 3, t).unwrap();
        let base = cross_fit(&ds, &plan, om.as_ref(), pm.as_ref(), t).map_err(|e| e.to_string())?;

        let i = r.random_range(0..n);
        let own = plan.fold_of[i];
        let mut y2 = y.clone();
        y2[i] = 0.0;
        let mut d2 = d.clone();
        d2[i] = 1 - d2[i];
        let zeroed = cross_fit(&ds.with_outcome(y2).unwrap(), &plan, om.as_ref(), pm.as_ref(), t);
        let flipped = Dataset::new(ids, names, x, d2, y).unwrap();
        let flipped = cross_fit(&flipped, &plan, om.as_ref(), pm.as_ref(), t);
        let (Ok(zeroed), Ok(flipped)) = (zeroed, flipped) else {
            return Err(format!("dataset {t}: perturbed cross-fit failed"));
        };
        for row in plan.members(own) {
            let same = base.y_hat[row].to_bits() == zeroed.y_hat[row].to_bits()
                && base.e_hat[row].to_bits() == flipped.e_hat[row].to_bits();
            if !same {
                return Err(format!("dataset {t}: row {row} in fold {own} moved after perturbing row {i}"));
            }
        }
        if (0..n).any(|row| plan.fold_of[row] != own && base.y_hat[row] != zeroed.y_hat[row]) {
            touched_other_folds += 1;
        }
    }
    check(
        touched_other_folds == 20,
        format!("20 datasets: own-fold predictions bitwise unchanged; other folds moved in {touched_other_folds}/20"),
    )
}

fn random_config(seed: u64) -> PipelineConfig {
    let mut r = rng(seed);
    let mut cfg = if r.random_bool(0.5) {
        PipelineConfig::for_path(format!("data/run_{seed}.{}", ["csv", "jsonl"][r.random_range(0..2)]))
    } else {
        let mut spec = DgpSpec::constant(r.random_range(100..50_000), r.random_range(1..40), r.random_range(-5.0..5.0), r.random_range(0.0..3.0), r.random());
        if r.random_bool(0.3) {
            let segments = r.random_range(2..5);
            spec.effect = EffectSpec::Segmented {
                effects: uniform_vec(&mut r, segments, -3.0, 9.0),
                separation: r.random_range(0.5..12.0),
            };
        }
        spec.noise_sd = r.random_range(0.1..5.0);
        spec.heteroscedastic = r.random_bool(0.5);
        spec.treatment_intercept = r.random_range(-1.0..1.0);
        spec.interaction = r.random_range(0.0..1.0);
        spec.propensity_floor = if r.random_bool(0.3) { r.random_range(0.0..0.1) } else { 0.0 };
        spec.selection_tail_df = r.random_bool(0.3).then(|| r.random_range(1.0..10.0));
        PipelineConfig::for_synthetic(spec)
    };
    cfg.folds.n_folds = r.random_range(2..10);
    cfg.folds.seed = r.random();
    for (model, name) in [(&mut cfg.outcome_model, "ridge"), (&mut cfg.propensity_model, "logistic")] {
        *model = ModelSpec::named(name);
        if r.random_bool(0.5) {
            model.regularization = Some(r.random_range(0.0..100.0));
        } else {
            let len = r.random_range(1..6);
            model.grid = uniform_vec(&mut r, len, 1e-4, 1e4);
        }
        model.standardize = r.random_bool(0.7);
        if name == "logistic" && r.random_bool(0.5) {
            model.max_iter = Some(r.random_range(1..500));
            model.tol = Some(r.random_range(1e-12..1e-4));
        }
    }
    cfg.weighting = EstimandSpec {
        estimand: if r.random_bool(0.5) { Estimand::Att } else { Estimand::Ate },
        alpha: r.random_range(0.0..0.2),
        rescale: r.random_bool(0.5),
        common_support: r.random_bool(0.5),
    };
    cfg.final_stage.intercept = r.random_bool(0.3);
    let fixed = r.random_bool(0.4);
    cfg.hetero = HeteroConfig {
        enabled: r.random_bool(0.7),
        target_variance: (!fixed).then(|| r.random_range(0.05..1.0)),
        n_components: fixed.then(|| r.random_range(1..10)),
        k: r.random_range(2..60),
        seed: r.random(),
        n_init: r.random_range(1..20),
        max_iter: r.random_range(1..1000),
        standardize_features: r.random_bool(0.5),
        standardize_components: r.random_bool(0.5),
        include_controls: r.random_bool(0.5),
    };
    cfg.baseline = BaselineConfig {
        enabled: r.random_bool(0.5),
        n_bins: r.random_range(1..20),
        n_bootstrap: r.random_range(0..500),
        seed: r.random(),
        lambda: r.random_bool(0.5).then(|| r.random_range(0.0..10.0)),
    };
    cfg.outputs = OutputsConfig {
        report: r.random_bool(0.5).then(|| format!("out/{seed}/report.json").into()),
        effects: r.random_bool(0.5).then(|| format!("out/{seed}/effects.csv").into()),
        explained_variance: r.random_bool(0.3).then(|| "ev.csv".into()),
        plots: r.random_bool(0.5),
    };
    cfg.confidence_level = r.random_range(0.5..0.999);
    cfg.resolve()
}

// 9. Exit codes for each documented trigger, and the config fixpoint.
fn cli_contract() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let write = |name: &str, text: &str| {
        std::fs::write(dir.path().join(name), text).unwrap();
        path(name)
    };
    let config_for = |data: &str| {
        format!(
            r#"{{"data": {{"path": "{data}"}}, "outcome_model": "ridge", "propensity_model": "logistic", "hetero": {{"enabled": false}}}}"#
        )
    };

    let good = write("good.json", &PipelineConfig::for_synthetic(DgpSpec::constant(600, 3, 1.0, 0.5, 1)).to_json());
    let bad = write(
        "bad.json",
        r#"{"data": {"path": "x.csv"}, "outcome_model": "ridge", "propensity_model": "logistic", "folds": {"n_folds": 1}}"#,
    );
    let missing = write("missing.json", &config_for(&path("nope.csv")));
    let garbled_csv = write("garbled.csv", "customer_id,treatment,outcome,x0\nc1,1,abc,0.5\nc2,0,1.0,0.1\n");
    let garbled = write("garbled.json", &config_for(&garbled_csv));
    let mut lonely = String::from("customer_id,treatment,outcome,x0\n");
    for i in 0..30 {
        lonely.push_str(&format!("c{i},{},{}.5,{}\n", u8::from(i == 0), i % 7, i % 5));
    }
    let lonely_csv = write("lonely.csv", &lonely);
    let lonely = write("lonely.json", &config_for(&lonely_csv));
    let report = path("report.json");
    let absent = path("absent.json");

    let cases: Vec<(i32, Vec<&str>)> = vec![
        (0, vec!["validate-config", "--config", &good]),
        (0, vec!["run", "--config", &good, "--out", &report]),
        (1, vec!["frobnicate"]),
        (1, vec!["run"]),
        (2, vec!["validate-config", "--config", &bad]),
        (2, vec!["run", "--config", &absent]),
        (3, vec!["run", "--config", &missing]),
        (3, vec!["run", "--config", &garbled]),
        (4, vec!["run", "--config", &lonely]),
    ];
    let mut mismatches = Vec::new();
    for (want, args) in &cases {
        let got = run_cli(std::iter::once("causal-dml").chain(args.iter().copied()));
        if got != *want {
            mismatches.push(format!("{} -> {got} (want {want})", args.join(" ")));
        }
    }
    if !std::path::Path::new(&report).exists() {
        mismatches.push("run did not write its report".into());
    }

    let mut fixpoint_failures = 0;
    for seed in 0..50 {
        let cfg = random_config(seed);
        let outcome = cfg.validate().and_then(|_| parse_config(&cfg.to_json()));
        let ok = match &outcome {
            Ok(back) => *back == cfg && back.to_json() == cfg.to_json(),
            Err(e) => {
                mismatches.push(format!("config {seed}: {e}"));
                false
            }
        };
        if !ok {
            fixpoint_failures += 1;
        }
    }
    check(
        mismatches.is_empty() && fixpoint_failures == 0,
        format!(
            "{} exit-code cases, mismatches: [{}]; fixpoint failures {fixpoint_failures}/50",
            cases.len(),
            mismatches.join("; ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("formula correctness", formulas),
        ("estimator calibration", calibration),
        ("heterogeneity recovery", heterogeneity),
        ("trimming and rescaling benefit", trimming_benefit),
        ("placebo mechanics", placebo),
        ("variance flavour ordering", variance_ordering),
        ("determinism", determinism),
        ("no cross-fit leakage", leakage),
        ("cli contract", cli_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
