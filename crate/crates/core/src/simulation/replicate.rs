use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimators::ols::{ols_fit, Centering};
use crate::evaluation::{
    ape_curve, median, predict, r2_top_m, summarize, ApePairing, MetricReport, PredictMode,
    PredictionSummary,
};
use crate::model::{Dataset, TuningParams};
use crate::pipeline::{fit_pipeline, Pipeline, PipelineOptions};
use crate::simulation::generate::{generate, generate_test, RNG_ALGORITHM};
use crate::simulation::scenario::ExperimentConfig;
use crate::tuning::DEFAULT_FOLDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicationOptions {
    pub pipeline: Pipeline,
    pub tuning: TuningParams,
    pub pairing: ApePairing,
    pub cv_folds: usize,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        ReplicationOptions {
            pipeline: Pipeline::PmlsFull,
            tuning: TuningParams::default(),
            pairing: ApePairing::ByTestPoint,
            cv_folds: DEFAULT_FOLDS,
        }
    }
}

/// Everything one replication produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepRecord {
    pub rep: usize,
    pub estimates: BTreeMap<String, f64>,
    /// APE curve per prediction mode, `m = 1..=n_test`.
    pub ape: BTreeMap<String, Vec<f64>>,
    /// `R^2_m` per prediction mode, `m = 2..=n_test` (`NaN` when undefined).
    pub r2: BTreeMap<String, Vec<f64>>,
    pub n_selected: Option<usize>,
    pub n_selected_second: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicationRun {
    pub config: ExperimentConfig,
    pub options: ReplicationOptions,
    pub rng: String,
    pub report: MetricReport,
    pub records: Vec<RepRecord>,
}

/// Names and true values of every tracked estimate.
pub fn truths(config: &ExperimentConfig) -> BTreeMap<String, f64> {
    let mut t = BTreeMap::new();
    for (j, b) in config.beta_true.iter().enumerate() {
        for prefix in ["", "ols.", "ols_yonly.", "ols_both."] {
            t.insert(format!("{prefix}beta{}", j + 1), *b);
        }
    }
    let s = &config.scenario;
    t.insert("mu_upper".into(), s.upper_expectation());
    t.insert("mu_lower".into(), s.lower_expectation());
    t.insert("mu_star".into(), s.mu_star());
    t.insert("ols.mean_residual".into(), s.upper_expectation());
    t
}

fn baselines(ds: &Dataset, est: &mut BTreeMap<String, f64>) -> Result<()> {
    for (prefix, c) in [
        ("ols.", Centering::None),
        ("ols_yonly.", Centering::YOnly),
        ("ols_both.", Centering::Both),
    ] {
        let fit = ols_fit(ds, c)?;
        for (j, b) in fit.beta.iter().enumerate() {
            est.insert(format!("{prefix}beta{}", j + 1), *b);
        }
        if c == Centering::None {
            let mean = fit.residuals.iter().sum::<f64>() / fit.residuals.len() as f64;
            est.insert("ols.mean_residual".into(), mean);
        }
    }
    Ok(())
}

fn one_rep(config: &ExperimentConfig, opts: &ReplicationOptions, rep: usize) -> Result<RepRecord> {
    let ds = generate(config, rep)?;
    let mut estimates = BTreeMap::new();
    baselines(&ds, &mut estimates)?;
    let popts = PipelineOptions {
        pipeline: opts.pipeline,
        cv_seed: config.seed.wrapping_add(rep as u64),
        cv_folds: opts.cv_folds,
        lower: true,
    };
    let fit = fit_pipeline(&ds, &opts.tuning, &popts)?;
    for (j, b) in fit.beta.iter().enumerate() {
        estimates.insert(format!("beta{}", j + 1), *b);
    }
    estimates.insert("mu_upper".into(), fit.mu_upper);
    if let Some(l) = fit.mu_lower {
        estimates.insert("mu_lower".into(), l);
    }
    if let Some(s) = fit.mu_star {
        estimates.insert("mu_star".into(), s);
    }

    let (mut ape, mut r2) = (BTreeMap::new(), BTreeMap::new());
    if let Some(test) = generate_test(config, rep)? {
        let y: Vec<f64> = test.y().iter().copied().collect();
        for mode in PredictMode::ALL {
            if let Ok(y_hat) = predict(&fit, test.x(), mode) {
                ape.insert(
                    mode.name().to_string(),
                    ape_curve(&y, &y_hat, opts.pairing)?,
                );
                let curve = (2..=y.len())
                    .map(|m| r2_top_m(&y, &y_hat, m, opts.pairing).unwrap_or(f64::NAN))
                    .collect();
                r2.insert(mode.name().to_string(), curve);
            }
        }
    }
    Ok(RepRecord {
        rep,
        estimates,
        ape,
        r2,
        n_selected: Some(fit.n_selected),
        n_selected_second: Some(fit.n_selected_second),
        error: None,
    })
}

/// Runs `config.reps` replications in parallel and aggregates them. A
/// failing replication is kept as a record with its error message.
pub fn run_replications(
    config: &ExperimentConfig,
    opts: &ReplicationOptions,
) -> Result<ReplicationRun> {
    config.validate()?;
    opts.tuning.validate(config.n)?;
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            one_rep(config, opts, rep).unwrap_or_else(|e| RepRecord {
                rep,
                estimates: BTreeMap::new(),
                ape: BTreeMap::new(),
                r2: BTreeMap::new(),
                n_selected: None,
                n_selected_second: None,
                error: Some(format!("{}: {e}", e.kind())),
            })
        })
        .collect();
    let report = aggregate(config, &records)?;
    Ok(ReplicationRun {
        config: config.clone(),
        options: opts.clone(),
        rng: RNG_ALGORITHM.to_string(),
        report,
        records,
    })
}

fn aggregate(config: &ExperimentConfig, records: &[RepRecord]) -> Result<MetricReport> {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let mut per_parameter = BTreeMap::new();
    for (name, truth) in truths(config) {
        let values: Vec<f64> = ok
            .iter()
            .filter_map(|r| r.estimates.get(&name).copied())
            .collect();
        if !values.is_empty() {
            per_parameter.insert(name, summarize(&values, truth));
        }
    }

    let mut prediction = BTreeMap::new();
    let mut max_below_ls_fraction = None;
    if config.test_size > 0 && !ok.is_empty() {
        for mode in PredictMode::ALL {
            let curves: Vec<&Vec<f64>> = ok.iter().filter_map(|r| r.ape.get(mode.name())).collect();
            if curves.is_empty() {
                continue;
            }
            let len = config.test_size;
            let ape_curve = (0..len)
                .map(|m| median(&curves.iter().map(|c| c[m]).collect::<Vec<_>>()))
                .collect();
            let ape_all = curves.iter().map(|c| c[len - 1]).sum::<f64>() / curves.len() as f64;
            let r2_curves: Vec<&Vec<f64>> =
                ok.iter().filter_map(|r| r.r2.get(mode.name())).collect();
            let r2_curve = (0..len - 1)
                .map(|k| {
                    let v: Vec<f64> = r2_curves
                        .iter()
                        .map(|c| c[k])
                        .filter(|x| x.is_finite())
                        .collect();
                    median(&v)
                })
                .collect();
            prediction.insert(
                mode.name().to_string(),
                PredictionSummary {
                    ape_curve,
                    ape_all,
                    r2_curve,
                },
            );
        }
        let m_max = (0.3 * config.test_size as f64).floor() as usize;
        let wins = ok
            .iter()
            .filter(|r| match (r.ape.get("max"), r.ape.get("ls")) {
                (Some(a), Some(b)) => (0..m_max).all(|m| a[m] < b[m]),
                _ => false,
            })
            .count();
        max_below_ls_fraction = Some(wins as f64 / ok.len() as f64);
    }

    let failure_messages: Vec<String> = records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("rep {}: {e}", r.rep)))
        .collect();
    Ok(MetricReport {
        per_parameter,
        prediction,
        max_below_ls_fraction,
        reps: records.len(),
        failures: failure_messages.len(),
        failure_messages,
    })
}
