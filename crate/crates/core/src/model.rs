//! Domain types shared by every estimator: the validated dataset, the
//! uncertain error scenario, tuning parameters, fit results and the
//! descending order view used to split selected rows into halves.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::linalg;

/// Smallest admissible ratio of smallest to largest singular value of `X`.
pub const RANK_RATIO_THRESHOLD: f64 = 1e-10;

/// Covariates and responses. `X` never carries an intercept column: the
/// intercept is absorbed in the upper expectation of the error.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Validates and wraps `x` (N x p) and `y` (length N).
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        validate_dataset(x, y)
    }

    /// Builds a dataset from row-major covariates.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(PmlsError::DimensionMismatch("ragged covariate rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    /// Attaches latent component tags (simulation only; estimators never read them).
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_rows() {
            return Err(PmlsError::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n_rows()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// `beta^T X_i` for every row.
    pub fn linear_predictor(&self, beta: &[f64]) -> DVector<f64> {
        assert_eq!(beta.len(), self.n_cols(), "beta length must equal p");
        if beta.is_empty() {
            return DVector::zeros(self.n_rows());
        }
        &self.x * DVector::from_column_slice(beta)
    }

    /// `Y_i - beta^T X_i` for every row.
    pub fn residuals(&self, beta: &[f64]) -> DVector<f64> {
        &self.y - self.linear_predictor(beta)
    }

    /// Rows `rows` as a new validated dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut ds = validate_dataset(x, y)?;
        if let Some(l) = &self.labels {
            ds.labels = Some(rows.iter().map(|&i| l[i]).collect());
        }
        Ok(ds)
    }

    /// Same covariates with every response negated.
    pub fn negated(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: -&self.y,
            labels: self.labels.clone(),
        }
    }
}

/// Checks shape, finiteness and column rank of a candidate dataset.
pub fn validate_dataset(x: DMatrix<f64>, y: DVector<f64>) -> Result<Dataset> {
    if x.nrows() != y.len() {
        return Err(PmlsError::DimensionMismatch(format!(
            "X has {} rows but Y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    let (n, p) = x.shape();
    if n < p + 2 {
        return Err(PmlsError::TooFewRows { rows: n, cols: p });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PmlsError::NonFinite("X".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(PmlsError::NonFinite("Y".into()));
    }
    if p > 0 {
        let ratio = linalg::singular_value_ratio(&x);
        if !(ratio >= RANK_RATIO_THRESHOLD) {
            return Err(PmlsError::RankDeficient { ratio });
        }
    }
    Ok(Dataset { x, y, labels: None })
}

/// `G_i = (Y_i - beta^T X_i - mu)^2` for every row.
pub fn squared_quantities(ds: &Dataset, beta: &[f64], mu: f64) -> Vec<f64> {
    ds.residuals(beta)
        .iter()
        .map(|r| {
            let e = r - mu;
            e * e
        })
        .collect()
}

/// Values sorted in descending order together with their original row
/// positions. Ties keep ascending original index.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedView {
    values: Vec<f64>,
    original_index: Vec<usize>,
}

impl OrderedView {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 0-based row positions: `values[j] == input[original_index[j]]`.
    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Original indices of the top-`n` ranks.
    pub fn top(&self, n: usize) -> &[usize] {
        &self.original_index[..n]
    }

    /// `U_n`: ranks `1..=floor(n/2)` of the prefix.
    pub fn upper_half(&self, n: usize) -> &[usize] {
        &self.original_index[..n / 2]
    }

    /// `L_n`: ranks `floor(n/2)+1..=n` of the prefix.
    pub fn lower_half(&self, n: usize) -> &[usize] {
        &self.original_index[n / 2..n]
    }

    /// Sum of the top-`n` ordered values.
    pub fn top_sum(&self, n: usize) -> f64 {
        self.values[..n].iter().sum()
    }
}

/// Sorts `values` in descending order with stable tie-breaking.
pub fn order_view(values: &[f64]) -> OrderedView {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    OrderedView {
        values: idx.iter().map(|&i| values[i]).collect(),
        original_index: idx,
    }
}

/// Distribution family of one scenario component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorFamily {
    Normal,
    /// Uniform with the component's mean and variance.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Component {
    pub mean: f64,
    pub variance: f64,
    pub family: ErrorFamily,
}

impl Component {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Component {
            mean,
            variance: sd * sd,
            family: ErrorFamily::Normal,
        }
    }

    /// `E[(eps - level)^2]` under this component.
    pub fn second_moment_about(&self, level: f64) -> f64 {
        let d = self.mean - level;
        d * d + self.variance
    }
}

/// A finite family of error distributions selected by a latent factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UncertainScenario {
    components: Vec<Component>,
    weights: Vec<f64>,
}

impl UncertainScenario {
    pub fn new(components: Vec<Component>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(PmlsError::InvalidConfig(
                "scenario needs at least one component".into(),
            ));
        }
        if components.len() != weights.len() {
            return Err(PmlsError::InvalidConfig(
                "one weight per component required".into(),
            ));
        }
        if components
            .iter()
            .any(|c| !(c.variance > 0.0) || !c.mean.is_finite() || !c.variance.is_finite())
        {
            return Err(PmlsError::InvalidConfig(
                "component variances must be positive".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(PmlsError::InvalidConfig("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PmlsError::InvalidConfig(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(UncertainScenario {
            components,
            weights,
        })
    }

    /// Equal weights over `components`.
    pub fn uniform(components: Vec<Component>) -> Result<Self> {
        let l = components.len();
        let w = if l == 0 {
            Vec::new()
        } else {
            vec![1.0 / l as f64; l]
        };
        // Equal weights can miss 1 by an ulp; renormalize the last one.
        let mut w = w;
        if l > 0 {
            let head: f64 = w[..l - 1].iter().sum();
            w[l - 1] = 1.0 - head;
        }
        Self::new(components, w)
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Upper expectation: the largest component mean.
    pub fn upper_expectation(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.mean)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lower expectation: the smallest component mean.
    pub fn lower_expectation(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.mean)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the first component attaining the upper expectation.
    pub fn upper_component(&self) -> usize {
        let top = self.upper_expectation();
        self.components
            .iter()
            .position(|c| c.mean == top)
            .unwrap_or(0)
    }

    /// Index of the component maximizing `E[(eps - upper)^2]`; the first
    /// one on ties.
    pub fn star_component(&self) -> usize {
        let top = self.upper_expectation();
        let mut best = 0;
        for (t, c) in self.components.iter().enumerate() {
            if c.second_moment_about(top) > self.components[best].second_moment_about(top) {
                best = t;
            }
        }
        best
    }

    /// Mean of the star component: the first-step intercept target.
    pub fn mu_star(&self) -> f64 {
        self.components[self.star_component()].mean
    }
}

/// Tuning parameters of the two estimation steps. `None` selects the
/// documented default (`lambda = n^(epsilon - 1)`, or a grid over `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TuningParams {
    pub lambda: Option<f64>,
    pub n_lambda: Option<usize>,
    pub lambda_tilde: Option<f64>,
    pub n_lambda_tilde: Option<usize>,
    pub lambda1: f64,
    pub epsilon: f64,
    /// Apply the beta = 0 penalty signed instead of in absolute value.
    pub signed_penalty: bool,
}

impl Default for TuningParams {
    fn default() -> Self {
        TuningParams {
            lambda: None,
            n_lambda: None,
            lambda_tilde: None,
            n_lambda_tilde: None,
            lambda1: 0.0,
            epsilon: 0.5,
            signed_penalty: true,
        }
    }
}

impl TuningParams {
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(PmlsError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_tilde", self.lambda_tilde),
            ("lambda1", Some(self.lambda1)),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(PmlsError::InvalidConfig(format!(
                        "{name} must be >= 0, got {v}"
                    )));
                }
            }
        }
        for (name, v) in [
            ("n_lambda", self.n_lambda),
            ("n_lambda_tilde", self.n_lambda_tilde),
        ] {
            if let Some(v) = v {
                if v > n_rows {
                    return Err(PmlsError::InvalidConfig(format!(
                        "{name} = {v} exceeds N = {n_rows}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Penalty weight for selection size `n`.
    pub fn lambda_at(&self, n: usize) -> f64 {
        self.lambda.unwrap_or_else(|| rate_lambda(n, self.epsilon))
    }

    pub fn lambda_tilde_at(&self, n: usize) -> f64 {
        self.lambda_tilde
            .unwrap_or_else(|| rate_lambda(n, self.epsilon))
    }
}

/// `n^(epsilon - 1)`.
pub fn rate_lambda(n: usize, epsilon: f64) -> f64 {
    (n as f64).powf(epsilon - 1.0)
}

/// Everything produced by a full two-step fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitResult {
    pub beta: Vec<f64>,
    /// First-step intercept; estimates the star component mean, not the
    /// upper expectation. Absent for the beta = 0 pipeline.
    pub mu_star: Option<f64>,
    pub mu_upper: f64,
    pub mu_lower: Option<f64>,
    pub n_selected: usize,
    pub n_selected_second: usize,
    /// `Y_i - beta^T X_i - mu_upper`.
    pub residuals: Vec<f64>,
    /// Row-major `(p+1) x (p+1)` covariance of `(beta, mu_star)`.
    pub cov_beta_mu: Vec<Vec<f64>>,
    pub var_mu_upper: f64,
    /// No-intercept least squares coefficients, for `ls` predictions.
    pub beta_ols: Vec<f64>,
    pub tuning: TuningParams,
    pub diagnostics: BTreeMap<String, f64>,
}
