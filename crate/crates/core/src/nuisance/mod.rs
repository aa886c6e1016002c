//! Nuisance models `E(Y|X)` and `E(D|X)` and the cross-fitting driver.
//!
//! Learners are looked up by name through a small registry. Adding a model
//! means implementing [`OutcomeLearner`] or [`PropensityLearner`] and adding
//! its name to [`OUTCOME_MODELS`] / [`PROPENSITY_MODELS`] and the matching
//! arm in [`outcome_learner`] / [`propensity_learner`].

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

mod crossfit;
pub mod logistic;
pub mod metrics;
pub mod ridge;

pub use crossfit::{cross_fit, CrossFitResult, FoldMetrics};
pub use logistic::{fit_logistic, IrlsOptions, LogisticModel};
pub use ridge::{fit_ridge, RidgeModel};

pub const OUTCOME_MODELS: &[&str] = &["ridge"];
pub const PROPENSITY_MODELS: &[&str] = &["logistic"];

/// Default regularization grid searched when no fixed value is given.
pub fn default_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0]
}

fn default_true() -> bool {
    true
}

/// Configuration of one nuisance learner.
///
/// Accepts either a bare name (`"ridge"`) or an object with the fields below.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub name: String,
    /// Fixed penalty (`lambda` for ridge, `l2` for logistic). `None` searches `grid`.
    pub regularization: Option<f64>,
    pub grid: Vec<f64>,
    pub standardize: bool,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpecFields {
    name: String,
    #[serde(default)]
    regularization: Option<f64>,
    #[serde(default = "default_grid")]
    grid: Vec<f64>,
    #[serde(default = "default_true")]
    standardize: bool,
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    tol: Option<f64>,
}

impl ModelSpec {
    pub fn named(name: &str) -> Self {
        ModelSpec {
            name: name.to_string(),
            regularization: None,
            grid: default_grid(),
            standardize: true,
            max_iter: None,
            tol: None,
        }
    }

    /// Fills solver defaults that only apply to iterative learners.
    pub fn resolved(mut self) -> Self {
        if self.name == "logistic" {
            self.max_iter.get_or_insert(100);
            self.tol.get_or_insert(1e-8);
        }
        self
    }

    pub fn with_regularization(mut self, value: f64) -> Self {
        self.regularization = Some(value);
        self
    }
}

impl<'de> Deserialize<'de> for ModelSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SpecVisitor;
        impl<'de> Visitor<'de> for SpecVisitor {
            type Value = ModelSpec;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a model name or a model object")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ModelSpec, E> {
                Ok(ModelSpec::named(v))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> std::result::Result<ModelSpec, A::Error> {
                let f = ModelSpecFields::deserialize(de::value::MapAccessDeserializer::new(map))?;
                Ok(ModelSpec {
                    name: f.name,
                    regularization: f.regularization,
                    grid: f.grid,
                    standardize: f.standardize,
                    max_iter: f.max_iter,
                    tol: f.tol,
                })
            }
        }
        deserializer.deserialize_any(SpecVisitor)
    }
}

pub trait FittedOutcome: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
    fn hyperparameters(&self) -> BTreeMap<String, f64>;
}

pub trait FittedPropensity: Send + Sync {
    fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64>;
    fn hyperparameters(&self) -> BTreeMap<String, f64>;
    fn converged(&self) -> bool {
        true
    }
}

pub trait OutcomeLearner: Send + Sync {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn FittedOutcome>>;
}

pub trait PropensityLearner: Send + Sync {
    fn fit(&self, x: &DMatrix<f64>, d: &[f64], seed: u64) -> Result<Box<dyn FittedPropensity>>;
}

pub struct RidgeLearner {
    pub lambda: Option<f64>,
    pub grid: Vec<f64>,
    pub standardize: bool,
}

impl FittedOutcome for RidgeModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        RidgeModel::predict(self, x)
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("lambda".to_string(), self.lambda)])
    }
}

impl OutcomeLearner for RidgeLearner {
    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn FittedOutcome>> {
        let lambda = match self.lambda {
            Some(l) => l,
            None => ridge::select_ridge_lambda(x, y, &self.grid, self.standardize, seed)?.0,
        };
        Ok(Box::new(fit_ridge(x, y, lambda, self.standardize)?))
    }
}

pub struct LogisticLearner {
    pub l2: Option<f64>,
    pub grid: Vec<f64>,
    pub options: IrlsOptions,
}

impl FittedPropensity for LogisticModel {
    fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        LogisticModel::predict_proba(self, x)
    }

    fn hyperparameters(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("l2".to_string(), self.l2),
            ("iterations".to_string(), self.iterations as f64),
        ])
    }

    fn converged(&self) -> bool {
        self.converged
    }
}

impl PropensityLearner for LogisticLearner {
    fn fit(&self, x: &DMatrix<f64>, d: &[f64], seed: u64) -> Result<Box<dyn FittedPropensity>> {
        let l2 = match self.l2 {
            Some(l) => l,
            None => logistic::select_logistic_l2(x, d, &self.grid, &self.options, seed)?.0,
        };
        Ok(Box::new(fit_logistic(x, d, l2, &self.options)?))
    }
}

fn unknown_model(name: &str, registered: &[&str]) -> Error {
    Error::Argument(format!(
        "unknown model `{name}`; registered models: {}",
        registered.join(", ")
    ))
}

pub fn outcome_learner(spec: &ModelSpec) -> Result<Box<dyn OutcomeLearner>> {
    match spec.name.as_str() {
        "ridge" => Ok(Box::new(RidgeLearner {
            lambda: spec.regularization,
            grid: spec.grid.clone(),
            standardize: spec.standardize,
        })),
        other => Err(unknown_model(other, OUTCOME_MODELS)),
    }
}

pub fn propensity_learner(spec: &ModelSpec) -> Result<Box<dyn PropensityLearner>> {
    match spec.name.as_str() {
        "logistic" => Ok(Box::new(LogisticLearner {
            l2: spec.regularization,
            grid: spec.grid.clone(),
            options: IrlsOptions {
                max_iter: spec.max_iter.unwrap_or(100),
                tol: spec.tol.unwrap_or(1e-8),
                standardize: spec.standardize,
            },
        })),
        other => Err(unknown_model(other, PROPENSITY_MODELS)),
    }
}
