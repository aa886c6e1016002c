//! End-to-end pipeline: load, fold, cross-fit, weight, estimate, and the
//! optional heterogeneity and baseline stages.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{estimate_po, PoEstimate, PoOptions};
use crate::config::PipelineConfig;
use crate::data::{assign_folds, load_dataset, ColumnSchema, Dataset};
use crate::error::{Error, Result};
use crate::final_stage::{estimate_att, AttEstimate};
use crate::hetero::{customer_effects, fit_hetero_model, summarize_effects, CustomerEffect, ExplainedVariance, HeteroSummary};
use crate::nuisance::{cross_fit, outcome_learner, propensity_learner, CrossFitResult, FoldMetrics, ModelSpec};
use crate::plot;
use crate::synth::{generate, DgpTruth};
use crate::weighting::{apply_support_and_trim, DropLog, Estimand, EstimandSpec, WeightedSample};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything needed to produce the scalar DML estimate on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlSettings {
    pub n_folds: usize,
    pub fold_seed: u64,
    pub outcome_model: ModelSpec,
    pub propensity_model: ModelSpec,
    pub weighting: EstimandSpec,
    pub intercept: bool,
    pub level: f64,
}

impl Default for DmlSettings {
    fn default() -> Self {
        DmlSettings {
            n_folds: 3,
            fold_seed: 0,
            outcome_model: ModelSpec::named("ridge").resolved(),
            propensity_model: ModelSpec::named("logistic").resolved(),
            weighting: EstimandSpec::default(),
            intercept: false,
            level: 0.95,
        }
    }
}

impl DmlSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        DmlSettings {
            n_folds: cfg.folds.n_folds,
            fold_seed: cfg.folds.seed,
            outcome_model: cfg.outcome_model.clone(),
            propensity_model: cfg.propensity_model.clone(),
            weighting: cfg.weighting,
            intercept: cfg.final_stage.intercept,
            level: cfg.confidence_level,
        }
    }
}

pub fn cross_fit_dataset(ds: &Dataset, s: &DmlSettings) -> Result<CrossFitResult> {
    let plan = assign_folds(ds.n(), s.n_folds, s.fold_seed)?;
    let om = outcome_learner(&s.outcome_model)?;
    let pm = propensity_learner(&s.propensity_model)?;
    cross_fit(ds, &plan, om.as_ref(), pm.as_ref(), s.fold_seed)
}

/// Scalar DML fit: residuals, weighted sample and the effect estimate.
#[derive(Debug, Clone)]
pub struct DmlFit {
    pub cf: CrossFitResult,
    pub ws: WeightedSample,
    pub att: AttEstimate,
}

pub fn fit_dml(ds: &Dataset, s: &DmlSettings) -> Result<DmlFit> {
    let cf = cross_fit_dataset(ds, s)?;
    let ws = apply_support_and_trim(&cf, &s.weighting)?;
    let att = estimate_att(&cf, &ws, s.level, s.intercept)?;
    Ok(DmlFit { cf, ws, att })
}

/// Penalty used by the baseline's per-bin ridge models when none is configured.
pub fn baseline_lambda(cfg: &PipelineConfig, metrics: &[FoldMetrics]) -> f64 {
    cfg.baseline
        .lambda
        .unwrap_or_else(|| baseline_lambda_from(cfg.outcome_model.regularization, metrics))
}

/// The outcome model's fixed penalty, else the median penalty selected across folds.
pub fn baseline_lambda_from(fixed: Option<f64>, metrics: &[FoldMetrics]) -> f64 {
    if let Some(l) = fixed {
        return l;
    }
    let mut ls: Vec<f64> = metrics
        .iter()
        .filter_map(|m| m.outcome_hyperparameters.get("lambda").copied())
        .collect();
    if ls.is_empty() {
        return 1.0;
    }
    ls.sort_by(f64::total_cmp);
    ls[(ls.len() - 1) / 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// A stage failure together with the timings of the stages that finished.
#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: String,
    #[source]
    pub source: Error,
    pub timings: Vec<StageTiming>,
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, PipelineError> {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                self.timings.push(StageTiming {
                    stage: name.to_string(),
                    seconds,
                });
                Ok(v)
            }
            Err(source) => Err(PipelineError {
                stage: name.to_string(),
                source,
                timings: self.timings.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub n_features: usize,
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttSummary {
    pub estimand: Estimand,
    pub beta: f64,
    pub se_homoscedastic: f64,
    pub se_hc: f64,
    pub ci_homoscedastic: (f64, f64),
    pub ci_hc: (f64, f64),
    pub level: f64,
    pub n_used: usize,
}

impl From<&AttEstimate> for AttSummary {
    fn from(a: &AttEstimate) -> Self {
        AttSummary {
            estimand: a.estimand.estimand,
            beta: a.beta,
            se_homoscedastic: a.se_homoscedastic(),
            se_hc: a.se_hc(),
            ci_homoscedastic: a.ci_homoscedastic,
            ci_hc: a.ci_hc,
            level: a.level,
            n_used: a.n_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroReport {
    pub summary: HeteroSummary,
    pub explained_variance: Vec<ExplainedVariance>,
    pub beta_se_hc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub true_att: f64,
    pub true_ate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub folds: u64,
    pub hetero: u64,
    pub baseline: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub library_version: String,
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub data: DataSummary,
    pub att: AttSummary,
    pub fit_metrics: Vec<FoldMetrics>,
    pub drop_log: DropLog,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hetero: Option<HeteroReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PoEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSummary>,
    pub timings: Vec<StageTiming>,
    /// SHA-256 over the report without timings, plus the effects table.
    pub digest: String,
}

/// Report plus the per-customer table it summarizes.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub effects: Option<Vec<CustomerEffect>>,
}

pub fn effects_csv(effects: &[CustomerEffect]) -> Vec<u8> {
    let mut out = b"customer_id,h,se,ci_lo,ci_hi\n".to_vec();
    for e in effects {
        writeln!(out, "{},{:?},{:?},{:?},{:?}", e.customer_id, e.h, e.se(), e.ci.0, e.ci.1)
            .expect("write to vec");
    }
    out
}

pub fn explained_variance_csv(curve: &[ExplainedVariance]) -> Vec<u8> {
    let mut out = b"component,ratio,cumulative\n".to_vec();
    for r in curve {
        writeln!(out, "{},{:?},{:?}", r.component, r.ratio, r.cumulative).expect("write to vec");
    }
    out
}

/// Digest of everything numeric in a run except timings.
pub fn compute_digest(report: &RunReport, effects: Option<&[CustomerEffect]>) -> String {
    let mut canonical = report.clone();
    canonical.timings.clear();
    canonical.digest.clear();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&canonical).expect("report serializes"));
    if let Some(e) = effects {
        h.update(effects_csv(e));
    }
    hex::encode(h.finalize())
}

fn load(cfg: &PipelineConfig) -> Result<(Dataset, Option<DgpTruth>)> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), _) => {
            let schema = cfg.data.schema.clone().unwrap_or_else(ColumnSchema::default);
            let ds = match cfg.data.format {
                Some(crate::data::FileFormat::Jsonl) => {
                    let f = File::open(path).map_err(|e| Error::io(path, e))?;
                    crate::data::read_jsonl(std::io::BufReader::new(f), &schema)?
                }
                Some(crate::data::FileFormat::Csv) => {
                    let f = File::open(path).map_err(|e| Error::io(path, e))?;
                    crate::data::read_csv(f, &schema)?
                }
                None => load_dataset(path, &schema)?,
            };
            Ok((ds, None))
        }
        (None, Some(spec)) => {
            let (ds, truth) = generate(spec)?;
            Ok((ds, Some(truth)))
        }
        (None, None) => Err(Error::Config {
            path: "$.data".into(),
            message: "no data source".into(),
        }),
    }
}

/// Runs every configured stage and returns the report; writes nothing.
pub fn execute(cfg: &PipelineConfig) -> std::result::Result<RunOutput, PipelineError> {
    let mut t = Timer { timings: Vec::new() };
    let cfg = cfg.clone().resolve();
    t.stage("config", || cfg.validate())?;
    let (ds, truth) = t.stage("load", || load(&cfg))?;
    let settings = DmlSettings::from_config(&cfg);
    let cf = t.stage("cross_fit", || cross_fit_dataset(&ds, &settings))?;
    let ws = t.stage("weighting", || apply_support_and_trim(&cf, &settings.weighting))?;
    let att = t.stage("final_stage", || {
        estimate_att(&cf, &ws, settings.level, settings.intercept)
    })?;

    let (hetero, effects) = if cfg.hetero.enabled {
        let (report, effects) = t.stage("hetero", || {
            let opts = cfg.hetero.options();
            let (model, psi) = fit_hetero_model(&ds, &cf, &ws, &opts)?;
            let effects = customer_effects(&model.coefficients, &psi, ds.customer_ids(), cfg.confidence_level)?;
            let include_controls = cfg.hetero.include_controls || cfg.weighting.estimand == Estimand::Ate;
            let summary = summarize_effects(&model, &effects, &ws, ds.treatment(), include_controls);
            let beta_se_hc = (0..model.coefficients.beta.len())
                .map(|k| model.coefficients.cov_hc[(k, k)].max(0.0).sqrt())
                .collect();
            Ok((
                HeteroReport {
                    summary,
                    explained_variance: model.basis.explained_variance_curve(),
                    beta_se_hc,
                },
                effects,
            ))
        })?;
        (Some(report), Some(effects))
    } else {
        (None, None)
    };

    let baseline = if cfg.baseline.enabled {
        Some(t.stage("baseline", || {
            let opts = PoOptions {
                n_bins: cfg.baseline.n_bins,
                n_bootstrap: cfg.baseline.n_bootstrap,
                lambda: baseline_lambda(&cfg, &cf.fit_metrics),
                standardize: cfg.outcome_model.standardize,
                level: cfg.confidence_level,
                seed: cfg.baseline.seed,
            };
            estimate_po(&ds, &cf.e_hat, &opts)
        })?)
    } else {
        None
    };

    let mut report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: Seeds {
            folds: cfg.folds.seed,
            hetero: cfg.hetero.seed,
            baseline: cfg.baseline.seed,
            data: cfg.data.synthetic.as_ref().map(|s| s.seed),
        },
        config: cfg,
        data: DataSummary {
            n: ds.n(),
            n_features: ds.n_features(),
            n_treated: ds.n_treated(),
        },
        att: AttSummary::from(&att),
        fit_metrics: cf.fit_metrics.clone(),
        drop_log: ws.drop_log,
        hetero,
        baseline,
        truth: truth.map(|t| TruthSummary {
            true_att: t.true_att,
            true_ate: t.true_ate,
        }),
        timings: t.timings,
        digest: String::new(),
    };
    report.digest = compute_digest(&report, effects.as_deref());
    Ok(RunOutput { report, effects })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn sibling(report: &Path, suffix: &str) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    report.with_file_name(format!("{stem}{suffix}"))
}

/// Writes the report, effects table, explained-variance curve and figures
/// to the paths named in `cfg.outputs`. Returns the files written.
pub fn write_outputs(out: &RunOutput, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let o = &cfg.outputs;
    let mut written = Vec::new();
    if let Some(p) = &o.report {
        write_json(p, &out.report)?;
        written.push(p.clone());
    }
    if let (Some(p), Some(e)) = (&o.effects, &out.effects) {
        write_bytes(p, &effects_csv(e))?;
        written.push(p.clone());
    }
    if let (Some(p), Some(h)) = (&o.explained_variance, &out.report.hetero) {
        write_bytes(p, &explained_variance_csv(&h.explained_variance))?;
        written.push(p.clone());
    }
    if o.plots {
        let base = o.report.clone().unwrap_or_else(|| PathBuf::from("report.json"));
        if let Some(h) = &out.report.hetero {
            let p = sibling(&base, "_explained_variance.svg");
            write_bytes(&p, plot::explained_variance_svg(&h.explained_variance).as_bytes())?;
            written.push(p);
            let p = sibling(&base, "_effects_histogram.svg");
            write_bytes(&p, plot::histogram_svg(&h.summary.histogram, "customer effect h").as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Runs the pipeline and writes its configured outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<RunReport, PipelineError> {
    let out = execute(cfg)?;
    write_outputs(&out, &out.report.config).map_err(|source| PipelineError {
        stage: "write".into(),
        source,
        timings: out.report.timings.clone(),
    })?;
    Ok(out.report)
}
