//! End-to-end estimation: cross-validated tuning, first step, second step
//! and the optional lower-expectation estimate, packed into a [`FitResult`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::estimators::first_step::{pmls_first_step, pmls_improved};
use crate::estimators::ols::{ols_fit, Centering};
use crate::estimators::second_step::{
    lower_expectation_regression, lower_expectation_sample, pmls_second_step,
    upper_expectation_sample,
};
use crate::linalg;
use crate::model::{Dataset, FitResult, TuningParams};
use crate::tuning::{
    cv_select_theta, cv_select_theta_tilde, cv_select_theta_tilde_lower, CvGrid, DEFAULT_FOLDS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Pipeline {
    /// No-intercept least squares; the upper expectation is the mean residual.
    OlsOnly,
    PmlsFull,
    /// First step with the extra `lambda1 |Lambda_n|` penalty.
    Improved,
    /// `Y` is the error itself; covariates are ignored.
    BetaZero,
}

impl std::str::FromStr for Pipeline {
    type Err = PmlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "olsOnly" | "ols" => Ok(Pipeline::OlsOnly),
            "pmlsFull" | "pmls" => Ok(Pipeline::PmlsFull),
            "improved" => Ok(Pipeline::Improved),
            "betaZero" => Ok(Pipeline::BetaZero),
            other => Err(PmlsError::InvalidConfig(format!(
                "unknown pipeline `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineOptions {
    pub pipeline: Pipeline,
    /// Seed of the cross-validation folds.
    pub cv_seed: u64,
    pub cv_folds: usize,
    /// Also estimate the lower expectation.
    pub lower: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            pipeline: Pipeline::PmlsFull,
            cv_seed: 0,
            cv_folds: DEFAULT_FOLDS,
            lower: true,
        }
    }
}

/// Grid for one step: the fixed `lambda` if given, else the default grid.
fn step_grid(ds: &Dataset, p: usize, lambda: Option<f64>, opts: &PipelineOptions) -> CvGrid {
    let mut grid = CvGrid::default_for(ds.n_rows(), p, opts.cv_seed);
    grid.folds = opts.cv_folds;
    if let Some(l) = lambda {
        grid.lambda_grid = vec![l];
    }
    grid
}

/// Runs the chosen pipeline. Any selection size left unset in `tuning`
/// is chosen by cross-validation.
pub fn fit_pipeline(
    ds: &Dataset,
    tuning: &TuningParams,
    opts: &PipelineOptions,
) -> Result<FitResult> {
    tuning.validate(ds.n_rows())?;
    let mut fit = match opts.pipeline {
        Pipeline::OlsOnly => fit_ols(ds, tuning),
        Pipeline::BetaZero => fit_beta_zero(ds, tuning, opts),
        Pipeline::PmlsFull | Pipeline::Improved => fit_pmls(ds, tuning, opts),
    }?;
    // Undefined diagnostics are omitted rather than stored as NaN, which
    // JSON cannot carry.
    fit.diagnostics.retain(|_, v| v.is_finite());
    Ok(fit)
}

/// `Y_i - beta^T X_i - level`, the residual convention of [`FitResult`].
pub fn residuals_about(ds: &Dataset, beta: &[f64], level: f64) -> Vec<f64> {
    ds.residuals(beta).iter().map(|h| h - level).collect()
}

fn fit_ols(ds: &Dataset, tuning: &TuningParams) -> Result<FitResult> {
    let ols = ols_fit(ds, Centering::None)?;
    let mu = linalg::mean(&ols.residuals);
    let n = ds.n_rows();
    Ok(FitResult {
        residuals: residuals_about(ds, &ols.beta, mu),
        beta: ols.beta.clone(),
        mu_star: None,
        mu_upper: mu,
        mu_lower: None,
        n_selected: n,
        n_selected_second: n,
        cov_beta_mu: Vec::new(),
        var_mu_upper: linalg::sample_variance(&ols.residuals) / n as f64,
        beta_ols: ols.beta,
        tuning: tuning.clone(),
        diagnostics: BTreeMap::new(),
    })
}

fn fit_pmls(ds: &Dataset, tuning: &TuningParams, opts: &PipelineOptions) -> Result<FitResult> {
    let p = ds.n_cols();
    let mut diagnostics = BTreeMap::new();
    let mut resolved = tuning.clone();
    if tuning.n_lambda.is_none() {
        let grid = step_grid(ds, p, tuning.lambda, opts);
        let (t, out) = cv_select_theta(ds, &grid, &resolved)?;
        let best = out
            .table
            .iter()
            .find(|r| r.lambda == out.lambda && r.n == out.n);
        diagnostics.insert("cvScoreTheta".into(), best.map_or(f64::NAN, |r| r.score));
        resolved = t;
    }
    let first = if opts.pipeline == Pipeline::Improved {
        pmls_improved(ds, &resolved)?
    } else {
        pmls_first_step(ds, &resolved)?
    };
    resolved.lambda = Some(first.lambda);
    resolved.n_lambda = Some(first.n_selected);

    let upper_tuning = if tuning.n_lambda_tilde.is_none() {
        let grid = step_grid(ds, 0, tuning.lambda_tilde, opts);
        let (t, out) = cv_select_theta_tilde(ds, &first.beta, &grid, &resolved)?;
        let best = out
            .table
            .iter()
            .find(|r| r.lambda == out.lambda && r.n == out.n);
        diagnostics.insert(
            "cvScoreThetaTilde".into(),
            best.map_or(f64::NAN, |r| r.score),
        );
        t
    } else {
        resolved.clone()
    };
    let second = pmls_second_step(ds, &first, &upper_tuning)?;

    let mu_lower = if opts.lower {
        let lower_tuning = if tuning.n_lambda_tilde.is_none() {
            let grid = step_grid(ds, 0, tuning.lambda_tilde, opts);
            cv_select_theta_tilde_lower(ds, &first.beta, &grid, &resolved)?.0
        } else {
            resolved.clone()
        };
        let lower = lower_expectation_regression(ds, &first.beta, &lower_tuning)?;
        diagnostics.insert("nSelectedLower".into(), lower.n_selected as f64);
        Some(lower.mu)
    } else {
        None
    };
    resolved.lambda_tilde = Some(second.top.lambda);
    resolved.n_lambda_tilde = Some(second.n_selected);

    diagnostics.insert("objective".into(), first.objective);
    diagnostics.insert("dataTerm".into(), first.data_term);
    diagnostics.insert("deltaHat".into(), first.delta_hat);
    diagnostics.insert("lambdaStat".into(), first.lambda_stat);
    diagnostics.insert("iterations".into(), first.iterations as f64);
    diagnostics.insert("converged".into(), if first.converged { 1.0 } else { 0.0 });
    diagnostics.insert("c0Skewness".into(), first.c0_skewness);
    diagnostics.insert("sigmaStarSq".into(), first.sigma_star_sq);
    diagnostics.insert("sigmaTildeSq".into(), second.sigma_tilde_sq);
    diagnostics.insert("gamma".into(), second.top.gamma);
    diagnostics.insert("secondObjective".into(), second.top.objective);

    let cov = &first.cov_beta_mu;
    Ok(FitResult {
        residuals: residuals_about(ds, &first.beta, second.mu_upper),
        beta: first.beta.clone(),
        mu_star: Some(first.mu),
        mu_upper: second.mu_upper,
        mu_lower,
        n_selected: first.n_selected,
        n_selected_second: second.n_selected,
        cov_beta_mu: (0..cov.nrows())
            .map(|i| cov.row(i).iter().copied().collect())
            .collect(),
        var_mu_upper: second.var_mu_upper,
        beta_ols: first.beta_ols,
        tuning: resolved,
        diagnostics,
    })
}

fn fit_beta_zero(ds: &Dataset, tuning: &TuningParams, opts: &PipelineOptions) -> Result<FitResult> {
    let p = ds.n_cols();
    let beta = vec![0.0; p];
    let y: Vec<f64> = ds.y().iter().copied().collect();
    let mut diagnostics = BTreeMap::new();

    // The beta = 0 estimator uses (lambda, n_lambda); its criterion has
    // the p + 2 = 2 complexity constant of the one-parameter model.
    let select = |lower: bool| -> Result<TuningParams> {
        if tuning.n_lambda.is_some() {
            return Ok(tuning.clone());
        }
        let grid = step_grid(ds, 0, tuning.lambda, opts);
        let (t, _) = if lower {
            cv_select_theta_tilde_lower(ds, &beta, &grid, tuning)?
        } else {
            cv_select_theta_tilde(ds, &beta, &grid, tuning)?
        };
        Ok(TuningParams {
            lambda: t.lambda_tilde,
            n_lambda: t.n_lambda_tilde,
            ..tuning.clone()
        })
    };

    let upper_tuning = select(false)?;
    let upper = upper_expectation_sample(&y, &upper_tuning)?;
    let mu_lower = if opts.lower {
        let lower = lower_expectation_sample(&y, &select(true)?)?;
        diagnostics.insert("nSelectedLower".into(), lower.n_selected as f64);
        Some(lower.mu)
    } else {
        None
    };
    let sel: Vec<f64> = upper.selected.iter().map(|&i| y[i]).collect();
    let sigma_tilde_sq = linalg::sample_variance(&sel);
    diagnostics.insert("sigmaTildeSq".into(), sigma_tilde_sq);
    diagnostics.insert("gamma".into(), upper.gamma);
    diagnostics.insert("objective".into(), upper.objective);

    let mut resolved = upper_tuning;
    resolved.lambda = Some(upper.lambda);
    resolved.n_lambda = Some(upper.n_selected);
    Ok(FitResult {
        residuals: residuals_about(ds, &beta, upper.mu),
        beta: beta.clone(),
        mu_star: None,
        mu_upper: upper.mu,
        mu_lower,
        n_selected: upper.n_selected,
        n_selected_second: upper.n_selected,
        cov_beta_mu: Vec::new(),
        var_mu_upper: sigma_tilde_sq / upper.n_selected as f64,
        beta_ols: beta,
        tuning: resolved,
        diagnostics,
    })
}
