//! Command-line front end.
//!
//! Every command writes JSON lines: first a `config` record holding the
//! fully resolved configuration (enough to re-run bit-identically), then
//! one or more result records. Failures produce a single `error` record and
//! the exit code of [`PmlsError::exit_code`].

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{PmlsError, Result};
use crate::estimators::ols::{ols_fit, Centering};
use crate::evaluation::{ape_curve, predict, r2_top_m, ApePairing, PredictMode};
use crate::io::{ingest_csv, Schema, Split, Table};
use crate::linalg;
use crate::model::{FitResult, TuningParams};
use crate::pipeline::{fit_pipeline, Pipeline, PipelineOptions};
use crate::simulation::{
    default_m, order_statistic_diagnostic, run_replications, ExperimentConfig, ExperimentId,
    ReplicationOptions, DEFAULT_TRIALS,
};
use crate::tuning::DEFAULT_FOLDS;

#[derive(Debug, Parser)]
#[command(
    name = "pmls",
    version,
    about = "Penalized maximum least squares for upper expectation regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo replications of a built-in experiment.
    Simulate(SimulateArgs),
    /// Fit a pipeline to a CSV file.
    Fit(FitArgs),
    /// Apply a saved fit to a CSV file.
    Predict(PredictArgs),
    /// Order-statistic tail diagnostic, optionally with C0 skewness of a CSV.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args, Clone)]
pub struct TuningArgs {
    /// First-step penalty weight (cross-validated when omitted with --n-lambda).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// First-step selection size.
    #[arg(long)]
    pub n_lambda: Option<usize>,
    #[arg(long)]
    pub lambda_tilde: Option<f64>,
    #[arg(long)]
    pub n_lambda_tilde: Option<usize>,
    /// Exponent of the default rate `n^(epsilon - 1)`.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Weight of the least squares half-difference penalty (improved pipeline).
    #[arg(long, default_value_t = 0.0)]
    pub lambda1: f64,
    /// Use the signed penalty in the beta = 0 estimator.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub penalty_signed: bool,
    #[arg(long, default_value = "pmlsFull")]
    pub pipeline: String,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
}

impl TuningArgs {
    fn resolve(&self) -> Result<(TuningParams, Pipeline, usize)> {
        let tuning = TuningParams {
            lambda: self.lambda,
            n_lambda: self.n_lambda,
            lambda_tilde: self.lambda_tilde,
            n_lambda_tilde: self.n_lambda_tilde,
            lambda1: self.lambda1,
            epsilon: self.epsilon,
            signed_penalty: self.penalty_signed,
        };
        Ok((tuning, self.pipeline.parse()?, self.folds))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub experiment: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "byTestPoint")]
    pub ape_pairing: String,
    /// Include every replication record in the output.
    #[arg(long)]
    pub records: bool,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "generic")]
    pub schema: String,
    /// `TRAIN/TEST` in file order or `random:TRAIN/TEST` (seeded by --seed).
    #[arg(long)]
    pub split: Option<String>,
    /// Seed of the cross-validation folds and of a random split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "byTestPoint")]
    pub ape_pairing: String,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output of `pmls fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "generic")]
    pub schema: String,
    #[arg(long, default_value = "max")]
    pub mode: String,
    #[arg(long, default_value = "byTestPoint")]
    pub ape_pairing: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub n: usize,
    /// Defaults to `ceil(n^0.8)`.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV whose least squares residuals are checked for skewness.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "generic")]
    pub schema: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "command")]
pub enum RunConfig {
    Simulate {
        experiment: ExperimentConfig,
        options: ReplicationOptions,
        include_records: bool,
        output: Option<PathBuf>,
    },
    Fit {
        input: PathBuf,
        schema: Schema,
        split: Split,
        pipeline: PipelineOptions,
        tuning: TuningParams,
        pairing: ApePairing,
        output: Option<PathBuf>,
    },
    Predict {
        fit: PathBuf,
        input: PathBuf,
        schema: Schema,
        mode: PredictMode,
        pairing: ApePairing,
        output: Option<PathBuf>,
    },
    Diagnose {
        n: usize,
        m: usize,
        trials: usize,
        seed: u64,
        input: Option<PathBuf>,
        schema: Schema,
        output: Option<PathBuf>,
    },
}

fn parse_split(spec: &str, seed: u64) -> Result<Split> {
    let bad = || PmlsError::InvalidConfig(format!("cannot parse split `{spec}`"));
    let (random, sizes) = match spec.strip_prefix("random:") {
        Some(rest) => (true, rest),
        None => (false, spec),
    };
    let (a, b) = sizes.split_once('/').ok_or_else(bad)?;
    let train = a.trim().parse().map_err(|_| bad())?;
    let test = b.trim().parse().map_err(|_| bad())?;
    Ok(if random {
        Split::Random { train, test, seed }
    } else {
        Split::FileOrder { train, test }
    })
}

/// Default split: 170 estimation rows for the bank schema, else every row.
fn default_split(schema: Schema, n_rows: usize) -> Split {
    match schema {
        Schema::BankSalary if n_rows > 170 => Split::FileOrder {
            train: 170,
            test: n_rows - 170,
        },
        _ => Split::FileOrder {
            train: n_rows,
            test: 0,
        },
    }
}

impl RunConfig {
    /// Resolves parsed arguments; reads the input CSV when a default split
    /// depends on its size.
    pub fn from_cli(cli: &Cli) -> Result<(RunConfig, Option<Table>)> {
        match &cli.command {
            Command::Simulate(a) => {
                let (tuning, pipeline, cv_folds) = a.tuning.resolve()?;
                let experiment = ExperimentConfig::builtin(
                    a.experiment.parse::<ExperimentId>()?,
                    a.n,
                    a.reps,
                    a.seed,
                )?;
                tuning.validate(a.n)?;
                Ok((
                    RunConfig::Simulate {
                        experiment,
                        options: ReplicationOptions {
                            pipeline,
                            tuning,
                            pairing: a.ape_pairing.parse()?,
                            cv_folds,
                        },
                        include_records: a.records,
                        output: a.out.clone(),
                    },
                    None,
                ))
            }
            Command::Fit(a) => {
                let (tuning, pipeline, folds) = a.tuning.resolve()?;
                let schema: Schema = a.schema.parse()?;
                let table = ingest_csv(&a.input, schema)?;
                let split = match &a.split {
                    Some(s) => parse_split(s, a.seed)?,
                    None => default_split(schema, table.n_rows()),
                };
                split.indices(table.n_rows())?;
                Ok((
                    RunConfig::Fit {
                        input: a.input.clone(),
                        schema,
                        split,
                        pipeline: PipelineOptions {
                            pipeline,
                            cv_seed: a.seed,
                            cv_folds: folds,
                            lower: true,
                        },
                        tuning,
                        pairing: a.ape_pairing.parse()?,
                        output: a.out.clone(),
                    },
                    Some(table),
                ))
            }
            Command::Predict(a) => Ok((
                RunConfig::Predict {
                    fit: a.fit.clone(),
                    input: a.input.clone(),
                    schema: a.schema.parse()?,
                    mode: a.mode.parse()?,
                    pairing: a.ape_pairing.parse()?,
                    output: a.out.clone(),
                },
                None,
            )),
            Command::Diagnose(a) => Ok((
                RunConfig::Diagnose {
                    n: a.n,
                    m: a.m.unwrap_or_else(|| default_m(a.n)),
                    trials: a.trials,
                    seed: a.seed,
                    input: a.input.clone(),
                    schema: a.schema.parse()?,
                    output: a.out.clone(),
                },
                None,
            )),
        }
    }

    pub fn output(&self) -> Option<&PathBuf> {
        match self {
            RunConfig::Simulate { output, .. }
            | RunConfig::Fit { output, .. }
            | RunConfig::Predict { output, .. }
            | RunConfig::Diagnose { output, .. } => output.as_ref(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| PmlsError::Numerical(format!("serialization: {e}")))
}

/// Produces the output records of a resolved configuration.
pub fn run(config: &RunConfig, table: Option<Table>) -> Result<Vec<Value>> {
    let mut out = vec![json!({ "record": "config", "config": to_value(config)? })];
    match config {
        RunConfig::Simulate {
            experiment,
            options,
            include_records,
            ..
        } => {
            let mut run = run_replications(experiment, options)?;
            if !include_records {
                run.records.clear();
            }
            out.push(
                json!({ "record": "simulation", "rng": run.rng, "report": to_value(&run.report)? }),
            );
            if *include_records {
                for r in &run.records {
                    out.push(json!({ "record": "replication", "replication": to_value(r)? }));
                }
            }
        }
        RunConfig::Fit {
            input,
            schema,
            split,
            pipeline,
            tuning,
            pairing,
            ..
        } => {
            let table = match table {
                Some(t) => t,
                None => ingest_csv(input, *schema)?,
            };
            let (train, test) = split.apply(&table)?;
            let ds = train.dataset()?;
            let fit = fit_pipeline(&ds, tuning, pipeline)?;
            out.push(json!({
                "record": "fit",
                "covariates": train.covariates,
                "response": train.response,
                "fit": to_value(&fit)?,
            }));
            let ols = ols_fit(&ds, Centering::Both)?;
            let mut ols_record = json!({
                "record": "olsIntercept",
                "beta": ols.beta,
                "intercept": ols.intercept,
            });
            if test.n_rows() > 0 {
                let y: Vec<f64> = test.y.iter().copied().collect();
                let mut evals = serde_json::Map::new();
                for mode in PredictMode::ALL {
                    let y_hat = predict(&fit, &test.x, mode)?;
                    evals.insert(mode.name().into(), evaluation(&y, &y_hat, *pairing)?);
                }
                out.push(
                    json!({ "record": "testEvaluation", "rows": test.n_rows(), "modes": evals }),
                );
                let y_hat: Vec<f64> = test
                    .x
                    .row_iter()
                    .map(|r| {
                        ols.intercept + r.iter().zip(&ols.beta).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                ols_record["test"] = evaluation(&y, &y_hat, *pairing)?;
            }
            out.push(ols_record);
        }
        RunConfig::Predict {
            fit,
            input,
            schema,
            mode,
            pairing,
            ..
        } => {
            let saved = load_fit(fit)?;
            let table = ingest_csv(input, *schema)?;
            if table.x.ncols() != saved.beta.len() {
                return Err(PmlsError::DimensionMismatch(format!(
                    "fit has {} coefficients, input has {} covariates",
                    saved.beta.len(),
                    table.x.ncols()
                )));
            }
            let y_hat = predict(&saved, &table.x, *mode)?;
            let y: Vec<f64> = table.y.iter().copied().collect();
            let residuals = residuals_of(&table, &saved);
            out.push(json!({
                "record": "prediction",
                "mode": mode.name(),
                "predictions": y_hat,
                "residuals": residuals,
                "evaluation": evaluation(&y, &y_hat, *pairing)?,
            }));
        }
        RunConfig::Diagnose {
            n,
            m,
            trials,
            seed,
            input,
            schema,
            ..
        } => {
            let d = order_statistic_diagnostic(*n, *m, *trials, *seed)?;
            out.push(json!({ "record": "diagnostic", "diagnostic": to_value(&d)? }));
            if let Some(path) = input {
                let ds = ingest_csv(path, *schema)?.dataset()?;
                let ols = ols_fit(&ds, Centering::None)?;
                let sq: Vec<f64> = ols.residuals.iter().map(|r| r * r).collect();
                let skew = linalg::skewness(&sq);
                out.push(json!({
                    "record": "c0Skewness",
                    "skewness": skew,
                    "asymmetric": skew.abs() >= crate::estimators::first_step::C0_SKEWNESS_WARN,
                }));
            }
        }
    }
    Ok(out)
}

/// Residuals about the upper expectation, with the same arithmetic as
/// [`crate::pipeline::residuals_about`] so that predicting the training rows reproduces the
/// fitted residuals bit for bit.
fn residuals_of(table: &Table, fit: &FitResult) -> Vec<f64> {
    let linear = if fit.beta.is_empty() {
        DVector::zeros(table.n_rows())
    } else {
        &table.x * DVector::from_column_slice(&fit.beta)
    };
    (&table.y - linear)
        .iter()
        .map(|h| h - fit.mu_upper)
        .collect()
}

fn evaluation(y: &[f64], y_hat: &[f64], pairing: ApePairing) -> Result<Value> {
    if y.is_empty() {
        return Ok(Value::Null);
    }
    let ape = ape_curve(y, y_hat, pairing)?;
    let r2: Vec<Option<f64>> = (2..=y.len())
        .map(|m| r2_top_m(y, y_hat, m, pairing).ok())
        .collect();
    Ok(json!({ "apeAll": ape[ape.len() - 1], "apeCurve": ape, "r2Curve": r2 }))
}

/// Reads the `fit` record written by the `fit` command.
pub fn load_fit(path: &std::path::Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PmlsError::Io(format!("{}: {e}", path.display())))?;
    for line in text.lines() {
        let Ok(v) = serde_json::from_str::<Value>(line) else {
            continue;
        };
        if v.get("record").and_then(Value::as_str) == Some("fit") {
            return serde_json::from_value(v["fit"].clone())
                .map_err(|e| PmlsError::SchemaMismatch(format!("bad fit record: {e}")));
        }
    }
    Err(PmlsError::SchemaMismatch(format!(
        "no fit record in {}",
        path.display()
    )))
}

/// Machine-readable error record.
pub fn error_record(e: &PmlsError) -> Value {
    json!({ "record": "error", "kind": e.kind(), "message": e.to_string(), "exitCode": e.exit_code() })
}

fn write_lines(records: &[Value], output: Option<&PathBuf>) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    match output {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| PmlsError::Io(format!("{}: {e}", p.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(PmlsError::from),
    }
}

/// Parses, runs and writes; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let mut output = None;
    let result = RunConfig::from_cli(&cli).and_then(|(config, table)| {
        output = config.output().cloned();
        let records = run(&config, table)?;
        write_lines(&records, output.as_ref())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let rec = error_record(&e);
            if write_lines(std::slice::from_ref(&rec), output.as_ref()).is_err() {
                eprintln!("{rec}");
            }
            e.exit_code()
        }
    }
}
