//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration, 3 data, 4 estimation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, parse_json};
use crate::error::Error;
use crate::pipeline::{execute, write_json, write_outputs};
use crate::synth::{generate, DgpSpec};
use crate::validation::{run_ci_width_study, run_coverage_study, run_placebo_study, EstimatorKind, StudyReport, StudySettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "causal-dml", version, about = "Double machine learning treatment effect estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct StudyArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimator settings (JSON); defaults when omitted.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Study report path; the per-replication CSV goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plots: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path (overrides outputs.report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Customer effects CSV (overrides outputs.effects).
        #[arg(long)]
        effects: Option<PathBuf>,
        #[arg(long)]
        explained_variance: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic dataset as CSV.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generator's ground truth (JSON).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Placebo comparison of DML and the binning baseline.
    PlaceboStudy {
        #[command(flatten)]
        study: StudyArgs,
        /// Comma-separated subset of `dml,po`.
        #[arg(long, value_delimiter = ',', default_value = "dml,po")]
        estimators: Vec<String>,
    },
    /// Interval width comparison of DML and the bootstrap baseline.
    CiWidthStudy {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long)]
        n_bootstrap: Option<usize>,
    },
    /// Interval coverage of the DML estimate.
    CoverageStudy {
        #[command(flatten)]
        study: StudyArgs,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Parse and validate a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Failure mapped to an exit code.
struct Failure {
    code: i32,
    message: String,
}

fn classify(e: &Error) -> i32 {
    if e.is_config_error() {
        EXIT_CONFIG
    } else if e.is_data_error() {
        EXIT_DATA
    } else {
        EXIT_ESTIMATION
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: classify(&e),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Reads a JSON input file; unreadable or malformed files are config errors.
fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_json(&text).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    })
}

fn study_inputs(a: &StudyArgs) -> Result<(DgpSpec, StudySettings), Failure> {
    let spec: DgpSpec = read_json(&a.spec)?;
    spec.validate().map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", a.spec.display()),
    })?;
    let settings = match &a.settings {
        Some(p) => read_json(p)?,
        None => StudySettings::default(),
    };
    Ok((spec, settings))
}

fn study_error(e: Error) -> Failure {
    match e {
        Error::Argument(m) => usage(m),
        other => other.into(),
    }
}

fn emit_study(report: &StudyReport, a: &StudyArgs) -> Result<(), Failure> {
    match &a.out {
        Some(p) => report.write(p, a.plots)?,
        None => {
            report.check_consistency()?;
            println!("{}", serde_json::to_string_pretty(report).expect("serializable"));
        }
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: e.to_string(),
            })?;
            println!("{}", cfg.to_json());
            Ok(())
        }
        Command::Run {
            config,
            out,
            effects,
            explained_variance,
            plots,
            seed,
        } => {
            let mut cfg = load_config(&config).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: e.to_string(),
            })?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            if out.is_some() {
                cfg.outputs.report = out;
            }
            if effects.is_some() {
                cfg.outputs.effects = effects;
            }
            if explained_variance.is_some() {
                cfg.outputs.explained_variance = explained_variance;
            }
            cfg.outputs.plots |= plots;
            let output = execute(&cfg).map_err(|e| {
                let done: Vec<String> = e
                    .timings
                    .iter()
                    .map(|t| format!("{}={:.3}s", t.stage, t.seconds))
                    .collect();
                Failure {
                    code: classify(&e.source),
                    message: format!("{e} (completed stages: {})", done.join(", ")),
                }
            })?;
            write_outputs(&output, &output.report.config)?;
            if output.report.config.outputs.report.is_none() {
                println!("{}", serde_json::to_string_pretty(&output.report).expect("serializable"));
            }
            Ok(())
        }
        Command::Generate { spec, out, truth, seed } => {
            let mut spec: DgpSpec = read_json(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (ds, t) = generate(&spec).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: e.to_string(),
            })?;
            ds.write_csv(&out)?;
            if let Some(p) = truth {
                write_json(&p, &t)?;
            }
            Ok(())
        }
        Command::PlaceboStudy { study, estimators } => {
            let (spec, settings) = study_inputs(&study)?;
            let kinds = estimators
                .iter()
                .map(|e| match e.trim() {
                    "dml" => Ok(EstimatorKind::Dml),
                    "po" => Ok(EstimatorKind::Po),
                    other => Err(usage(format!("unknown estimator `{other}`; expected dml or po"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = run_placebo_study(&spec, &kinds, &settings, study.reps, study.seed).map_err(study_error)?;
            emit_study(&report, &study)
        }
        Command::CiWidthStudy { study, n_bootstrap } => {
            let (spec, mut settings) = study_inputs(&study)?;
            if let Some(b) = n_bootstrap {
                settings.po_bootstrap = b;
            }
            let report = run_ci_width_study(&spec, &settings, study.reps, study.seed).map_err(study_error)?;
            emit_study(&report, &study)
        }
        Command::CoverageStudy { study, level } => {
            let (spec, settings) = study_inputs(&study)?;
            let report =
                run_coverage_study(&spec, &settings, study.reps, level, study.seed).map_err(study_error)?;
            emit_study(&report, &study)
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to standard error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
