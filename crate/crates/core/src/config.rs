//! JSON pipeline configuration.
//!
//! The schema is closed: unknown keys are rejected and every error carries
//! the JSON path of the offending value (`$.hetero.k`). Parsing fills
//! defaults and [`PipelineConfig::resolve`] makes every implicit choice
//! explicit, so the config embedded in a report re-parses to itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, FileFormat};
use crate::error::{Error, Result};
use crate::hetero::{ComponentSelection, HeteroOptions};
use crate::nuisance::{ModelSpec, OUTCOME_MODELS, PROPENSITY_MODELS};
use crate::synth::DgpSpec;
use crate::weighting::EstimandSpec;

pub const DEFAULT_TARGET_VARIANCE: f64 = 0.8;

fn default_true() -> bool {
    true
}

fn default_level() -> f64 {
    0.95
}

fn default_n_folds() -> usize {
    3
}

fn default_k() -> usize {
    20
}

fn default_n_init() -> usize {
    10
}

fn default_max_iter() -> usize {
    300
}

fn default_n_bins() -> usize {
    5
}

fn default_n_bootstrap() -> usize {
    200
}

/// Input data: a file on disk or a synthetic generator spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<ColumnSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<FileFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<DgpSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    #[serde(default = "default_n_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            n_folds: default_n_folds(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalStageConfig {
    /// Adds an intercept to the residual regression.
    #[serde(default)]
    pub intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Cumulative explained-variance target; exclusive with `n_components`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_components: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_true")]
    pub standardize_features: bool,
    #[serde(default = "default_true")]
    pub standardize_components: bool,
    /// Report aggregates over controls as well as treated customers.
    #[serde(default)]
    pub include_controls: bool,
}

impl Default for HeteroConfig {
    fn default() -> Self {
        HeteroConfig {
            enabled: true,
            target_variance: None,
            n_components: None,
            k: default_k(),
            seed: 0,
            n_init: default_n_init(),
            max_iter: default_max_iter(),
            standardize_features: true,
            standardize_components: true,
            include_controls: false,
        }
    }
}

impl HeteroConfig {
    pub fn options(&self) -> HeteroOptions {
        let selection = match (self.n_components, self.target_variance) {
            (Some(r), _) => ComponentSelection::Fixed(r),
            (None, t) => ComponentSelection::TargetVariance(t.unwrap_or(DEFAULT_TARGET_VARIANCE)),
        };
        HeteroOptions {
            selection,
            standardize_features: self.standardize_features,
            standardize_components: self.standardize_components,
            k: self.k,
            seed: self.seed,
            n_init: self.n_init,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    /// Ridge penalty of the per-bin models. Unset: the outcome model's fixed
    /// penalty, or the median of the penalties selected across folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            enabled: false,
            n_bins: default_n_bins(),
            n_bootstrap: default_n_bootstrap(),
            seed: 0,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Customer effects CSV (`customer_id,h,se,ci_lo,ci_hi`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effects: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explained_variance: Option<PathBuf>,
    /// Writes SVG figures next to the report.
    #[serde(default)]
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    pub outcome_model: ModelSpec,
    pub propensity_model: ModelSpec,
    #[serde(default)]
    pub weighting: EstimandSpec,
    #[serde(default)]
    pub final_stage: FinalStageConfig,
    #[serde(default)]
    pub hetero: HeteroConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Renders a serde path (`hetero.k`, `grid[2]`) as `$.hetero.k`.
fn json_path(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." || s.is_empty() {
        "$".to_string()
    } else if s.starts_with('[') {
        format!("${s}")
    } else {
        format!("$.{s}")
    }
}

/// Deserializes a strict JSON document, reporting failures with their JSON path.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = json_path(e.path());
        let inner = e.into_inner();
        let message = if inner.is_syntax() || inner.is_eof() {
            format!("invalid JSON: {inner}")
        } else {
            inner.to_string()
        };
        config_err(&path, message)
    })?;
    de.end().map_err(|e| config_err("$", format!("invalid JSON: {e}")))?;
    Ok(value)
}

/// Parses, validates and resolves a configuration document.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg = parse_json::<PipelineConfig>(text)?.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

impl PipelineConfig {
    /// Config for a file dataset with every other field at its default.
    pub fn for_path(path: impl Into<PathBuf>) -> Self {
        PipelineConfig::with_data(DataConfig {
            path: Some(path.into()),
            schema: None,
            format: None,
            synthetic: None,
        })
        .resolve()
    }

    pub fn for_synthetic(spec: DgpSpec) -> Self {
        PipelineConfig::with_data(DataConfig {
            path: None,
            schema: None,
            format: None,
            synthetic: Some(spec),
        })
        .resolve()
    }

    fn with_data(data: DataConfig) -> Self {
        PipelineConfig {
            data,
            folds: FoldConfig::default(),
            outcome_model: ModelSpec::named("ridge"),
            propensity_model: ModelSpec::named("logistic"),
            weighting: EstimandSpec::default(),
            final_stage: FinalStageConfig::default(),
            hetero: HeteroConfig::default(),
            baseline: BaselineConfig::default(),
            outputs: OutputsConfig::default(),
            confidence_level: default_level(),
        }
    }

    /// Makes implicit defaults explicit. Idempotent.
    pub fn resolve(mut self) -> Self {
        if let Some(path) = &self.data.path {
            self.data.schema.get_or_insert_with(ColumnSchema::default);
            self.data.format.get_or_insert(FileFormat::from_path(path));
        }
        self.outcome_model = self.outcome_model.resolved();
        self.propensity_model = self.propensity_model.resolved();
        if self.hetero.n_components.is_none() && self.hetero.target_variance.is_none() {
            self.hetero.target_variance = Some(DEFAULT_TARGET_VARIANCE);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(config_err("$.data", "give either `path` or `synthetic`, not both"))
            }
            (None, None) => return Err(config_err("$.data", "one of `path` or `synthetic` is required")),
            (None, Some(spec)) => {
                if self.data.schema.is_some() || self.data.format.is_some() {
                    return Err(config_err(
                        "$.data",
                        "`schema` and `format` only apply to file data",
                    ));
                }
                spec.validate()
                    .map_err(|e| config_err("$.data.synthetic", e.to_string()))?;
            }
            (Some(_), None) => {}
        }
        if self.folds.n_folds < 2 {
            return Err(config_err(
                "$.folds.n_folds",
                format!("cross-fitting needs at least 2 folds, got {}", self.folds.n_folds),
            ));
        }
        check_model(&self.outcome_model, OUTCOME_MODELS, "$.outcome_model")?;
        check_model(&self.propensity_model, PROPENSITY_MODELS, "$.propensity_model")?;
        self.weighting
            .validate()
            .map_err(|e| config_err("$.weighting.alpha", e.to_string()))?;
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(config_err(
                "$.confidence_level",
                format!("must lie in (0, 1), got {}", self.confidence_level),
            ));
        }
        let h = &self.hetero;
        if h.target_variance.is_some() && h.n_components.is_some() {
            return Err(config_err(
                "$.hetero",
                "give either `target_variance` or `n_components`, not both",
            ));
        }
        if let Some(t) = h.target_variance {
            if !(t > 0.0 && t <= 1.0) {
                return Err(config_err("$.hetero.target_variance", format!("must lie in (0, 1], got {t}")));
            }
        }
        if h.n_components == Some(0) {
            return Err(config_err("$.hetero.n_components", "must be at least 1"));
        }
        if h.k < 2 {
            return Err(config_err("$.hetero.k", format!("need at least 2 clusters, got {}", h.k)));
        }
        if h.n_init < 1 {
            return Err(config_err("$.hetero.n_init", "must be at least 1"));
        }
        if self.baseline.n_bins < 1 {
            return Err(config_err("$.baseline.n_bins", "must be at least 1"));
        }
        if let Some(l) = self.baseline.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(config_err("$.baseline.lambda", format!("must be finite and >= 0, got {l}")));
            }
        }
        Ok(())
    }

    /// Replaces every seed (folds, clustering, bootstrap, generator).
    pub fn override_seed(&mut self, seed: u64) {
        self.folds.seed = seed;
        self.hetero.seed = seed;
        self.baseline.seed = seed;
        if let Some(spec) = &mut self.data.synthetic {
            spec.seed = seed;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_model(spec: &ModelSpec, registered: &[&str], path: &str) -> Result<()> {
    if !registered.contains(&spec.name.as_str()) {
        return Err(config_err(
            &format!("{path}.name"),
            format!(
                "unknown model `{}`; registered models: {}",
                spec.name,
                registered.join(", ")
            ),
        ));
    }
    if let Some(r) = spec.regularization {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(config_err(
                &format!("{path}.regularization"),
                format!("must be finite and >= 0, got {r}"),
            ));
        }
    }
    if spec.regularization.is_none() && (spec.grid.is_empty() || spec.grid.iter().any(|g| !(*g > 0.0 && g.is_finite()))) {
        return Err(config_err(
            &format!("{path}.grid"),
            "search grid must be a non-empty list of positive values",
        ));
    }
    if spec.max_iter == Some(0) {
        return Err(config_err(&format!("{path}.max_iter"), "must be at least 1"));
    }
    if let Some(t) = spec.tol {
        if !(t > 0.0) {
            return Err(config_err(&format!("{path}.tol"), "must be positive"));
        }
    }
    Ok(())
}
