//! Monte Carlo studies on synthetic data: placebo comparisons, confidence
//! interval widths against the bootstrap baseline, and coverage.
//!
//! Replication `r` uses the seed `derive_seed(seed, r)` for its dataset and
//! derives every other seed from that, so a study is reproducible from
//! `(spec, reps, seed)` regardless of thread scheduling. Estimator failures
//! are recorded per replication and never abort the study.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::baseline::{estimate_po, PoOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, pairwise_sum};
use crate::pipeline::{baseline_lambda_from, fit_dml, write_json, DmlSettings};
use crate::plot;
use crate::synth::{generate, make_placebo, DgpSpec};

pub const STUDY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Placebo,
    CiWidth,
    Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dml,
    Po,
}

impl EstimatorKind {
    fn key(self) -> &'static str {
        match self {
            EstimatorKind::Dml => "dml",
            EstimatorKind::Po => "po",
        }
    }
}

/// Estimator settings shared by all studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub dml: DmlSettings,
    pub po_bins: usize,
    pub po_bootstrap: usize,
    /// `None` uses the median outcome penalty selected during cross-fitting.
    pub po_lambda: Option<f64>,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            dml: DmlSettings::default(),
            po_bins: 5,
            po_bootstrap: 200,
            po_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    /// Failure messages keyed by estimator; empty when everything ran.
    pub errors: BTreeMap<String, String>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub kind: StudyKind,
    pub spec: DgpSpec,
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
    pub settings: StudySettings,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub estimators: Vec<EstimatorKind>,
    pub failures: usize,
    pub aggregates: BTreeMap<String, f64>,
    pub records: Vec<RepRecord>,
    /// SHA-256 over everything except runtime measurements.
    pub digest: String,
}

fn is_runtime(key: &str) -> bool {
    key.starts_with("runtime")
}

/// Per-replication seeds derived from the study seed.
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, rep as u64)
}

fn settings_for_rep(settings: &StudySettings, seed: u64) -> DmlSettings {
    DmlSettings {
        fold_seed: derive_seed(seed, 1),
        ..settings.dml.clone()
    }
}

/// Values of `key` over the records that have it, in record order.
pub fn column(records: &[RepRecord], key: &str) -> Vec<f64> {
    records.iter().filter_map(|r| r.values.get(key).copied()).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(v) / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    let ss: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&ss) / (v.len() - 1) as f64).sqrt()
}

fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    crate::baseline::quantile_sorted(&s, q)
}

/// Two-sided exact sign test p-value for `wins` successes out of `n` non-tied pairs.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    let k = wins.min(n - wins) as u64;
    (2.0 * b.cdf(k)).min(1.0)
}

fn insert_summary(agg: &mut BTreeMap<String, f64>, name: &str, v: &[f64]) {
    agg.insert(format!("mean_{name}"), mean(v));
    agg.insert(format!("sd_{name}"), sd(v));
    agg.insert(format!("mcse_{name}"), sd(v) / (v.len() as f64).sqrt());
}

fn placebo_aggregates(records: &[RepRecord], estimators: &[EstimatorKind]) -> BTreeMap<String, f64> {
    let mut agg = BTreeMap::new();
    for est in estimators {
        let k = est.key();
        insert_summary(&mut agg, &format!("abs_placebo_{k}"), &column(records, &format!("abs_placebo_{k}")));
        insert_summary(&mut agg, &format!("rel_placebo_{k}"), &column(records, &format!("rel_placebo_{k}")));
        agg.insert(format!("mean_placebo_{k}"), mean(&column(records, &format!("placebo_{k}"))));
        agg.insert(format!("runtime_mean_{k}"), mean(&column(records, &format!("runtime_{k}"))));
        agg.insert(
            format!("n_ok_{k}"),
            records.iter().filter(|r| r.values.contains_key(&format!("placebo_{k}"))).count() as f64,
        );
    }
    if estimators.contains(&EstimatorKind::Dml) {
        agg.insert("coverage_zero_dml".into(), mean(&column(records, "covers_zero_dml")));
    }
    if estimators.contains(&EstimatorKind::Dml) && estimators.contains(&EstimatorKind::Po) {
        let diffs = column(records, "abs_diff_dml_minus_po");
        insert_summary(&mut agg, "abs_diff_dml_minus_po", &diffs);
        let dml_better = diffs.iter().filter(|&&d| d < 0.0).count();
        let po_better = diffs.iter().filter(|&&d| d > 0.0).count();
        agg.insert("n_pairs".into(), diffs.len() as f64);
        agg.insert("n_dml_better".into(), dml_better as f64);
        agg.insert("n_po_better".into(), po_better as f64);
        agg.insert("sign_test_p".into(), sign_test_p(dml_better, dml_better + po_better));
    }
    agg
}

fn ci_width_aggregates(records: &[RepRecord]) -> BTreeMap<String, f64> {
    let mut agg = BTreeMap::new();
    let ratio = column(records, "width_ratio");
    insert_summary(&mut agg, "width_ratio", &ratio);
    agg.insert("q25_width_ratio".into(), quantile(&ratio, 0.25));
    agg.insert("median_width_ratio".into(), quantile(&ratio, 0.5));
    agg.insert("q75_width_ratio".into(), quantile(&ratio, 0.75));
    for key in ["width_dml", "width_po", "scaled_width_dml", "scaled_width_po"] {
        agg.insert(format!("mean_{key}"), mean(&column(records, key)));
    }
    let (rd, rp) = (column(records, "runtime_dml"), column(records, "runtime_po"));
    agg.insert("runtime_mean_dml".into(), mean(&rd));
    agg.insert("runtime_mean_po".into(), mean(&rp));
    agg.insert("runtime_ratio_po_over_dml".into(), mean(&rp) / mean(&rd));
    agg
}

fn coverage_aggregates(records: &[RepRecord]) -> BTreeMap<String, f64> {
    let mut agg = BTreeMap::new();
    let err = column(records, "error");
    agg.insert("coverage".into(), mean(&column(records, "covered_hc")));
    agg.insert("coverage_homoscedastic".into(), mean(&column(records, "covered_homoscedastic")));
    agg.insert("bias".into(), mean(&err));
    agg.insert("mcse_bias".into(), sd(&err) / (err.len() as f64).sqrt());
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    agg.insert("rmse".into(), mean(&sq).sqrt());
    agg.insert("sd_beta".into(), sd(&column(records, "beta")));
    agg.insert("mean_se_hc".into(), mean(&column(records, "se_hc")));
    agg.insert("mean_se_homoscedastic".into(), mean(&column(records, "se_homoscedastic")));
    agg.insert("n_ok".into(), err.len() as f64);
    agg
}

impl StudyReport {
    /// Aggregates from the records; undefined values (e.g. a mean over no
    /// successful replications) are omitted.
    pub fn recompute_aggregates(&self) -> BTreeMap<String, f64> {
        let mut agg = match self.kind {
            StudyKind::Placebo => placebo_aggregates(&self.records, &self.estimators),
            StudyKind::CiWidth => ci_width_aggregates(&self.records),
            StudyKind::Coverage => coverage_aggregates(&self.records),
        };
        agg.retain(|_, v| v.is_finite());
        agg
    }

    /// Bitwise agreement between stored and recomputed aggregates.
    pub fn check_consistency(&self) -> Result<()> {
        let fresh = self.recompute_aggregates();
        let same = fresh.len() == self.aggregates.len()
            && fresh
                .iter()
                .zip(&self.aggregates)
                .all(|((ka, va), (kb, vb))| ka == kb && va.to_bits() == vb.to_bits());
        if same {
            Ok(())
        } else {
            Err(Error::Numerical("stored aggregates differ from the per-replication records".into()))
        }
    }

    pub fn compute_digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.digest.clear();
        canonical.aggregates.retain(|k, _| !is_runtime(k));
        for r in &mut canonical.records {
            r.values.retain(|k, _| !is_runtime(k));
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical).expect("report serializes"));
        hex::encode(h.finalize())
    }

    fn finish(mut self) -> Self {
        self.failures = self.records.iter().filter(|r| !r.errors.is_empty()).count();
        self.aggregates = self.recompute_aggregates();
        self.digest = self.compute_digest();
        self
    }

    /// Per-replication CSV: `rep,seed,<value columns...>,errors`.
    pub fn records_csv(&self) -> Vec<u8> {
        let keys: std::collections::BTreeSet<&String> =
            self.records.iter().flat_map(|r| r.values.keys()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["rep".to_string(), "seed".to_string()];
        header.extend(keys.iter().map(|k| k.to_string()));
        header.push("errors".into());
        w.write_record(&header).expect("in-memory write");
        for r in &self.records {
            let mut row = vec![r.rep.to_string(), r.seed.to_string()];
            row.extend(keys.iter().map(|k| r.values.get(*k).map(|v| format!("{v:?}")).unwrap_or_default()));
            row.push(
                r.errors
                    .iter()
                    .map(|(k, v)| format!("{k}: {v}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            );
            w.write_record(&row).expect("in-memory write");
        }
        w.into_inner().expect("flush to vec")
    }

    /// Writes `<stem>.json`, `<stem>.csv` and, when requested, an SVG figure.
    pub fn write(&self, json_path: &Path, plots: bool) -> Result<()> {
        self.check_consistency()?;
        write_json(json_path, self)?;
        let csv_path = json_path.with_extension("csv");
        let mut f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        f.write_all(&self.records_csv()).map_err(|e| Error::io(&csv_path, e))?;
        if plots {
            let svg_path = json_path.with_extension("svg");
            std::fs::write(&svg_path, self.figure()).map_err(|e| Error::io(&svg_path, e))?;
        }
        Ok(())
    }

    /// Placebo bar chart, width comparison, or coverage bar, depending on the kind.
    pub fn figure(&self) -> String {
        let a = &self.aggregates;
        let get = |k: &str| a.get(k).copied().unwrap_or(f64::NAN);
        match self.kind {
            StudyKind::Placebo => {
                let labels: Vec<String> = self.estimators.iter().map(|e| e.key().to_uppercase()).collect();
                let vals: Vec<f64> = self
                    .estimators
                    .iter()
                    .map(|e| get(&format!("mean_abs_placebo_{}", e.key())))
                    .collect();
                let errs: Vec<f64> = self
                    .estimators
                    .iter()
                    .map(|e| 2.0 * get(&format!("mcse_abs_placebo_{}", e.key())))
                    .collect();
                plot::bar_chart_svg("Mean |placebo estimate| (+-2 MCSE)", &labels, &vals, Some(&errs))
            }
            StudyKind::CiWidth => plot::bar_chart_svg(
                "CI width scaled by baseline point estimate",
                &["DML (HC)".into(), "PO bootstrap".into()],
                &[get("mean_scaled_width_dml"), get("mean_scaled_width_po")],
                None,
            ),
            StudyKind::Coverage => plot::bar_chart_svg(
                &format!("Coverage at level {}", self.level),
                &["HC".into(), "homoscedastic".into(), "nominal".into()],
                &[get("coverage"), get("coverage_homoscedastic"), self.level],
                None,
            ),
        }
    }
}

fn check_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(Error::Argument(format!("study needs at least {min} replications, got {reps}")));
    }
    Ok(())
}

/// Runs `f` for every replication in parallel and collects records in order.
pub fn replicate<F>(reps: usize, seed: u64, f: F) -> Vec<RepRecord>
where
    F: Fn(u64, &mut RepRecord) + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let s = rep_seed(seed, rep);
            let mut rec = RepRecord {
                rep,
                seed: s,
                errors: BTreeMap::new(),
                values: BTreeMap::new(),
            };
            f(s, &mut rec);
            rec
        })
        .collect()
}

fn po_options(settings: &StudySettings, dml_fit_lambda: f64, n_bootstrap: usize, seed: u64) -> PoOptions {
    PoOptions {
        n_bins: settings.po_bins,
        n_bootstrap,
        lambda: settings.po_lambda.unwrap_or(dml_fit_lambda),
        standardize: settings.dml.outcome_model.standardize,
        level: settings.dml.level,
        seed: derive_seed(seed, 2),
    }
}

/// Point estimate (and DML interval) of every requested estimator on one
/// dataset. The baseline reuses the DML cross-fitted propensities.
fn estimate_all(
    estimators: &[EstimatorKind],
    ds: &Dataset,
    s: &DmlSettings,
    settings: &StudySettings,
    seed: u64,
) -> Vec<(EstimatorKind, Result<(f64, Option<(f64, f64)>)>, f64)> {
    let start = Instant::now();
    let fit = fit_dml(ds, s);
    let dml_time = start.elapsed().as_secs_f64();
    estimators
        .iter()
        .map(|&est| match (&fit, est) {
            (Err(e), _) => (est, Err(Error::Estimation(e.to_string())), dml_time),
            (Ok(f), EstimatorKind::Dml) => (est, Ok((f.att.beta, Some(f.att.ci_hc))), dml_time),
            (Ok(f), EstimatorKind::Po) => {
                let start = Instant::now();
                let lambda = baseline_lambda_from(s.outcome_model.regularization, &f.cf.fit_metrics);
                let po = estimate_po(ds, &f.cf.e_hat, &po_options(settings, lambda, 0, seed));
                (est, po.map(|p| (p.att, None)), start.elapsed().as_secs_f64())
            }
        })
        .collect()
}

/// Placebo study: per replication, estimate on the placebo dataset (true
/// effect 0) and on the original event for scaling.
pub fn run_placebo_study(
    spec: &DgpSpec,
    estimators: &[EstimatorKind],
    settings: &StudySettings,
    reps: usize,
    seed: u64,
) -> Result<StudyReport> {
    check_reps(reps, 2)?;
    spec.validate()?;
    if estimators.is_empty() {
        return Err(Error::Argument("placebo study needs at least one estimator".into()));
    }
    let mut estimators = estimators.to_vec();
    estimators.sort();
    estimators.dedup();
    let records = replicate(reps, seed, |s, rec| {
        let dgp = spec.with_seed(s);
        let (ds, truth) = match generate(&dgp) {
            Ok(v) => v,
            Err(e) => {
                rec.errors.insert("generate".into(), e.to_string());
                return;
            }
        };
        let placebo = match make_placebo(&ds, &truth, &dgp) {
            Ok(p) => p,
            Err(e) => {
                rec.errors.insert("placebo".into(), e.to_string());
                return;
            }
        };
        let dml = settings_for_rep(settings, s);
        let events = estimate_all(&estimators, &ds, &dml, settings, s);
        for ((est, out, runtime), (_, event, _)) in estimate_all(&estimators, &placebo, &dml, settings, s)
            .into_iter()
            .zip(events)
        {
            let k = est.key();
            rec.values.insert(format!("runtime_{k}"), runtime);
            match out {
                Ok((beta, ci)) => {
                    rec.values.insert(format!("placebo_{k}"), beta);
                    rec.values.insert(format!("abs_placebo_{k}"), beta.abs());
                    if let Some((lo, hi)) = ci {
                        rec.values.insert(format!("covers_zero_{k}"), f64::from(u8::from(lo <= 0.0 && 0.0 <= hi)));
                    }
                    match event {
                        Ok((event, _)) => {
                            rec.values.insert(format!("event_{k}"), event);
                            rec.values.insert(format!("rel_placebo_{k}"), beta.abs() / event.abs());
                        }
                        Err(e) => {
                            rec.errors.insert(format!("{k}_event"), e.to_string());
                        }
                    }
                }
                Err(e) => {
                    rec.errors.insert(k.to_string(), e.to_string());
                }
            }
        }
        if let (Some(a), Some(b)) = (rec.values.get("abs_placebo_dml"), rec.values.get("abs_placebo_po")) {
            let d = a - b;
            rec.values.insert("abs_diff_dml_minus_po".into(), d);
        }
    });
    Ok(StudyReport {
        schema_version: STUDY_SCHEMA_VERSION,
        kind: StudyKind::Placebo,
        spec: spec.clone(),
        reps,
        seed,
        level: settings.dml.level,
        settings: settings.clone(),
        estimators,
        failures: 0,
        aggregates: BTreeMap::new(),
        records,
        digest: String::new(),
    }
    .finish())
}

/// DML (HC) versus bootstrap baseline interval widths, both scaled by the
/// baseline point estimate, plus runtimes.
pub fn run_ci_width_study(spec: &DgpSpec, settings: &StudySettings, reps: usize, seed: u64) -> Result<StudyReport> {
    check_reps(reps, 2)?;
    spec.validate()?;
    if settings.po_bootstrap == 0 {
        return Err(Error::Argument("the width study needs bootstrap replicates (po_bootstrap > 0)".into()));
    }
    let records = replicate(reps, seed, |s, rec| {
        let (ds, _) = match generate(&spec.with_seed(s)) {
            Ok(v) => v,
            Err(e) => {
                rec.errors.insert("generate".into(), e.to_string());
                return;
            }
        };
        let dml = settings_for_rep(settings, s);
        let start = Instant::now();
        let fit = match fit_dml(&ds, &dml) {
            Ok(f) => f,
            Err(e) => {
                rec.errors.insert("dml".into(), e.to_string());
                return;
            }
        };
        rec.values.insert("runtime_dml".into(), start.elapsed().as_secs_f64());
        let start = Instant::now();
        let lambda = baseline_lambda_from(dml.outcome_model.regularization, &fit.cf.fit_metrics);
        // The baseline needs propensities too; its runtime includes them.
        let po = crate::pipeline::cross_fit_dataset(&ds, &dml)
            .and_then(|cf| estimate_po(&ds, &cf.e_hat, &po_options(settings, lambda, settings.po_bootstrap, s)));
        rec.values.insert("runtime_po".into(), start.elapsed().as_secs_f64());
        match po {
            Ok(po) => {
                let (lo, hi) = po.ci_bootstrap.expect("bootstrap requested");
                let w_dml = fit.att.width_hc();
                let w_po = hi - lo;
                rec.values.insert("beta_dml".into(), fit.att.beta);
                rec.values.insert("att_po".into(), po.att);
                rec.values.insert("width_dml".into(), w_dml);
                rec.values.insert("width_po".into(), w_po);
                rec.values.insert("scaled_width_dml".into(), w_dml / po.att.abs());
                rec.values.insert("scaled_width_po".into(), w_po / po.att.abs());
                rec.values.insert("width_ratio".into(), w_dml / w_po);
            }
            Err(e) => {
                rec.errors.insert("po".into(), e.to_string());
            }
        }
    });
    Ok(StudyReport {
        schema_version: STUDY_SCHEMA_VERSION,
        kind: StudyKind::CiWidth,
        spec: spec.clone(),
        reps,
        seed,
        level: settings.dml.level,
        settings: settings.clone(),
        estimators: vec![EstimatorKind::Dml, EstimatorKind::Po],
        failures: 0,
        aggregates: BTreeMap::new(),
        records,
        digest: String::new(),
    }
    .finish())
}

/// Fraction of replications whose interval contains the realized true ATT
/// (or ATE, for the ATE estimand), with bias and RMSE of the point estimate.
pub fn run_coverage_study(spec: &DgpSpec, settings: &StudySettings, reps: usize, level: f64, seed: u64) -> Result<StudyReport> {
    check_reps(reps, 50)?;
    spec.validate()?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("level must lie in (0, 1), got {level}")));
    }
    let mut settings = settings.clone();
    settings.dml.level = level;
    let records = replicate(reps, seed, |s, rec| {
        let (ds, truth) = match generate(&spec.with_seed(s)) {
            Ok(v) => v,
            Err(e) => {
                rec.errors.insert("generate".into(), e.to_string());
                return;
            }
        };
        let target = match settings.dml.weighting.estimand {
            crate::weighting::Estimand::Att => truth.true_att,
            crate::weighting::Estimand::Ate => truth.true_ate,
        };
        let start = Instant::now();
        match fit_dml(&ds, &settings_for_rep(&settings, s)) {
            Ok(fit) => {
                let a = &fit.att;
                let inside = |(lo, hi): (f64, f64)| f64::from(u8::from(lo <= target && target <= hi));
                rec.values.insert("truth".into(), target);
                rec.values.insert("beta".into(), a.beta);
                rec.values.insert("error".into(), a.beta - target);
                rec.values.insert("se_hc".into(), a.se_hc());
                rec.values.insert("se_homoscedastic".into(), a.se_homoscedastic());
                rec.values.insert("covered_hc".into(), inside(a.ci_hc));
                rec.values.insert("covered_homoscedastic".into(), inside(a.ci_homoscedastic));
            }
            Err(e) => {
                rec.errors.insert("dml".into(), e.to_string());
            }
        }
        rec.values.insert("runtime_dml".into(), start.elapsed().as_secs_f64());
    });
    Ok(StudyReport {
        schema_version: STUDY_SCHEMA_VERSION,
        kind: StudyKind::Coverage,
        spec: spec.clone(),
        reps,
        seed,
        level,
        settings,
        estimators: vec![EstimatorKind::Dml],
        failures: 0,
        aggregates: BTreeMap::new(),
        records,
        digest: String::new(),
    }
    .finish())
}
