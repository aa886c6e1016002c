use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::linalg::derive_seed;
use crate::nuisance::logistic::PROB_CLAMP;
use crate::nuisance::metrics::{auc, r_squared};
use crate::nuisance::{OutcomeLearner, PropensityLearner};

/// Out-of-sample diagnostics for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub outcome_r2: f64,
    /// `None` when the scored fold holds a single treatment class.
    pub propensity_auc: Option<f64>,
    pub propensity_converged: bool,
    pub outcome_hyperparameters: BTreeMap<String, f64>,
    pub propensity_hyperparameters: BTreeMap<String, f64>,
}

/// Pooled out-of-fold predictions and residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitResult {
    pub y_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub y_res: Vec<f64>,
    pub d_res: Vec<f64>,
    pub treatment: Vec<u8>,
    pub fold_plan: FoldPlan,
    pub fit_metrics: Vec<FoldMetrics>,
}

impl CrossFitResult {
    pub fn n(&self) -> usize {
        self.y_hat.len()
    }

    /// Rebuilds a result from externally computed predictions.
    pub fn from_predictions(
        y: &[f64],
        treatment: &[u8],
        y_hat: Vec<f64>,
        e_hat: Vec<f64>,
        fold_plan: FoldPlan,
    ) -> Self {
        let y_res = y.iter().zip(&y_hat).map(|(a, b)| a - b).collect();
        let d_res = treatment
            .iter()
            .zip(&e_hat)
            .map(|(&a, b)| a as f64 - b)
            .collect();
        CrossFitResult {
            y_hat,
            e_hat,
            y_res,
            d_res,
            treatment: treatment.to_vec(),
            fold_plan,
            fit_metrics: Vec::new(),
        }
    }
}

struct FoldOutput {
    members: Vec<usize>,
    y_hat: Vec<f64>,
    e_hat: Vec<f64>,
    metrics: FoldMetrics,
}

/// Cross-fits both nuisance models: every fold is scored by models trained
/// on the remaining folds, and residuals are pooled across folds.
pub fn cross_fit(
    ds: &Dataset,
    plan: &FoldPlan,
    outcome: &dyn OutcomeLearner,
    propensity: &dyn PropensityLearner,
    seed: u64,
) -> Result<CrossFitResult> {
    if plan.len() != ds.n() {
        return Err(Error::Argument(format!(
            "fold plan covers {} rows but dataset has {}",
            plan.len(),
            ds.n()
        )));
    }
    ds.require_both_arms()?;
    let d_all = ds.treatment_f64();
    let y_all = ds.outcome();

    let outputs: Vec<Result<FoldOutput>> = (0..plan.n_folds)
        .into_par_iter()
        .map(|f| {
            let train = plan.complement(f);
            let test = plan.members(f);
            let d_train: Vec<f64> = train.iter().map(|&i| d_all[i]).collect();
            let treated = d_train.iter().filter(|&&v| v == 1.0).count();
            if treated == 0 || treated == d_train.len() {
                return Err(Error::Estimation(format!(
                    "training complement of fold {f} contains a single treatment class"
                )));
            }
            let y_train: Vec<f64> = train.iter().map(|&i| y_all[i]).collect();
            let x_train = ds.features().select_rows(train.iter());
            let x_test = ds.features().select_rows(test.iter());
            let fold_seed = derive_seed(seed, f as u64);

            let om = outcome.fit(&x_train, &y_train, fold_seed)?;
            let pm = propensity.fit(&x_train, &d_train, derive_seed(fold_seed, 1))?;
            let y_hat = om.predict(&x_test);
            let e_hat: Vec<f64> = pm
                .predict_proba(&x_test)
                .into_iter()
                .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
                .collect();

            let y_test: Vec<f64> = test.iter().map(|&i| y_all[i]).collect();
            let d_test: Vec<f64> = test.iter().map(|&i| d_all[i]).collect();
            let metrics = FoldMetrics {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                outcome_r2: r_squared(&y_test, &y_hat),
                propensity_auc: auc(&d_test, &e_hat),
                propensity_converged: pm.converged(),
                outcome_hyperparameters: om.hyperparameters(),
                propensity_hyperparameters: pm.hyperparameters(),
            };
            Ok(FoldOutput {
                members: test,
                y_hat,
                e_hat,
                metrics,
            })
        })
        .collect();

    let n = ds.n();
    let mut y_hat = vec![0.0; n];
    let mut e_hat = vec![0.0; n];
    let mut fit_metrics = Vec::with_capacity(plan.n_folds);
    for out in outputs {
        let out = out?;
        for (k, &i) in out.members.iter().enumerate() {
            y_hat[i] = out.y_hat[k];
            e_hat[i] = out.e_hat[k];
        }
        fit_metrics.push(out.metrics);
    }
    let mut result = CrossFitResult::from_predictions(y_all, ds.treatment(), y_hat, e_hat, plan.clone());
    result.fit_metrics = fit_metrics;
    Ok(result)
}
