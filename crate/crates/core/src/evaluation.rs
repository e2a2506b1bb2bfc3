//! Predictions, top-`m` prediction metrics and replication summaries.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PmlsError, Result};
use crate::model::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// `beta_LS^T x`.
    Ls,
    /// `beta^T x + mu_upper`.
    Max,
    /// `beta^T x + (mu_lower + mu_upper) / 2`.
    Mid,
}

impl PredictMode {
    pub const ALL: [PredictMode; 3] = [PredictMode::Ls, PredictMode::Max, PredictMode::Mid];

    pub fn name(self) -> &'static str {
        match self {
            PredictMode::Ls => "ls",
            PredictMode::Max => "max",
            PredictMode::Mid => "mid",
        }
    }
}

impl std::str::FromStr for PredictMode {
    type Err = PmlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" => Ok(PredictMode::Ls),
            "max" => Ok(PredictMode::Max),
            "mid" => Ok(PredictMode::Mid),
            other => Err(PmlsError::InvalidConfig(format!(
                "unknown prediction mode `{other}`"
            ))),
        }
    }
}

fn dot_rows(x0: &DMatrix<f64>, beta: &[f64]) -> Result<Vec<f64>> {
    if x0.ncols() != beta.len() {
        return Err(PmlsError::DimensionMismatch(format!(
            "{} covariate columns for {} coefficients",
            x0.ncols(),
            beta.len()
        )));
    }
    Ok((0..x0.nrows())
        .map(|i| x0.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect())
}

pub fn predict(fit: &FitResult, x0: &DMatrix<f64>, mode: PredictMode) -> Result<Vec<f64>> {
    let (beta, level) = match mode {
        PredictMode::Ls => (&fit.beta_ols, 0.0),
        PredictMode::Max => (&fit.beta, fit.mu_upper),
        PredictMode::Mid => {
            let lower = fit.mu_lower.ok_or(PmlsError::MissingLowerExpectation)?;
            (&fit.beta, 0.5 * (lower + fit.mu_upper))
        }
    };
    Ok(dot_rows(x0, beta)?.into_iter().map(|v| v + level).collect())
}

/// How predictions are matched to the top-`m` observed responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ApePairing {
    /// Each observed response keeps the prediction made at its test point.
    #[default]
    ByTestPoint,
    /// Observed responses and predictions are sorted separately.
    SortedIndependently,
}

impl std::str::FromStr for ApePairing {
    type Err = PmlsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byTestPoint" | "point" => Ok(ApePairing::ByTestPoint),
            "sortedIndependently" | "sorted" => Ok(ApePairing::SortedIndependently),
            other => Err(PmlsError::InvalidConfig(format!(
                "unknown APE pairing `{other}`"
            ))),
        }
    }
}

fn descending(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx
}

/// `(observed, predicted)` pairs ordered by descending observation.
fn paired(y: &[f64], y_hat: &[f64], pairing: ApePairing) -> Result<Vec<(f64, f64)>> {
    if y.len() != y_hat.len() {
        return Err(PmlsError::DimensionMismatch(format!(
            "{} observations for {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    let oy = descending(y);
    Ok(match pairing {
        ApePairing::ByTestPoint => oy.iter().map(|&i| (y[i], y_hat[i])).collect(),
        ApePairing::SortedIndependently => {
            let op = descending(y_hat);
            oy.iter()
                .zip(&op)
                .map(|(&i, &j)| (y[i], y_hat[j]))
                .collect()
        }
    })
}

fn check_m(m: usize, len: usize) -> Result<()> {
    if m > len {
        return Err(PmlsError::MTooLarge { m, len });
    }
    if m == 0 {
        return Err(PmlsError::InvalidConfig("m must be at least 1".into()));
    }
    Ok(())
}

/// Mean squared prediction error over the `m` largest observed responses.
pub fn ape_top_m(y: &[f64], y_hat: &[f64], m: usize, pairing: ApePairing) -> Result<f64> {
    check_m(m, y.len())?;
    let pairs = paired(y, y_hat, pairing)?;
    Ok(pairs[..m].iter().map(|(o, p)| (o - p).powi(2)).sum::<f64>() / m as f64)
}

/// APE for every `m = 1..=len`, in one pass.
pub fn ape_curve(y: &[f64], y_hat: &[f64], pairing: ApePairing) -> Result<Vec<f64>> {
    let pairs = paired(y, y_hat, pairing)?;
    let mut acc = 0.0;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, (o, p))| {
            acc += (o - p).powi(2);
            acc / (k + 1) as f64
        })
        .collect())
}

/// `R^2` restricted to the `m` largest observed responses.
pub fn r2_top_m(y: &[f64], y_hat: &[f64], m: usize, pairing: ApePairing) -> Result<f64> {
    check_m(m, y.len())?;
    if m < 2 {
        return Err(PmlsError::InvalidConfig("R^2 needs m >= 2".into()));
    }
    let pairs = &paired(y, y_hat, pairing)?[..m];
    let mean = pairs.iter().map(|(o, _)| o).sum::<f64>() / m as f64;
    let ss_res: f64 = pairs.iter().map(|(o, p)| (o - p).powi(2)).sum();
    let ss_tot: f64 = pairs.iter().map(|(o, _)| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(PmlsError::ZeroDenominator { m });
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(PmlsError::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            left: lo + k as f64 * width,
            right: if k + 1 == bins {
                hi
            } else {
                lo + (k + 1) as f64 * width
            },
            count,
        })
        .collect())
}

/// Boxplot statistics: quartiles by linear interpolation, whiskers at the
/// most extreme points within 1.5 IQR, everything beyond as outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

pub fn five_number(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    Some(FiveNumber {
        min: s[0],
        q1,
        median: quantile(&s, 0.5),
        q3,
        max: s[s.len() - 1],
        lower_whisker: inside.first().copied().unwrap_or(q1),
        upper_whisker: inside.last().copied().unwrap_or(q3),
        outliers: s
            .into_iter()
            .filter(|v| *v < lo_fence || *v > hi_fence)
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParameterSummary {
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
    pub count: usize,
    pub boxplot: Option<FiveNumber>,
}

/// Bias, MSE and boxplot of `estimates` around `truth`.
pub fn summarize(estimates: &[f64], truth: f64) -> ParameterSummary {
    let k = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / k;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / k;
    ParameterSummary {
        truth,
        bias,
        mse,
        count: estimates.len(),
        boxplot: five_number(estimates),
    }
}

/// Prediction metrics of one mode across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictionSummary {
    /// Median over replications of `APE(m)`, `m = 1..=n_test`.
    pub ape_curve: Vec<f64>,
    /// Mean over replications of `APE(n_test)`.
    pub ape_all: f64,
    /// Median over replications of `R^2_m`, `m = 2..=n_test`.
    pub r2_curve: Vec<f64>,
}

/// Aggregated results of a replication run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricReport {
    pub per_parameter: BTreeMap<String, ParameterSummary>,
    pub prediction: BTreeMap<String, PredictionSummary>,
    /// Share of successful replications whose `max` APE curve lies below the
    /// `ls` curve for every `m <= 0.3 n_test`.
    pub max_below_ls_fraction: Option<f64>,
    pub reps: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(beta: Vec<f64>, upper: f64, lower: Option<f64>) -> FitResult {
        FitResult {
            beta_ols: vec![1.0; beta.len()],
            beta,
            mu_star: None,
            mu_upper: upper,
            mu_lower: lower,
            n_selected: 1,
            n_selected_second: 1,
            residuals: vec![],
            cov_beta_mu: vec![],
            var_mu_upper: 0.0,
            tuning: Default::default(),
            diagnostics: Default::default(),
        }
    }

    #[test]
    fn zero_row_predicts_upper_expectation() {
        let f = fit(vec![2.0, -1.0], 3.5, Some(0.5));
        let x0 = DMatrix::zeros(1, 2);
        assert_eq!(predict(&f, &x0, PredictMode::Max).unwrap(), vec![3.5]);
    }

    #[test]
    fn max_is_mid_plus_half_range() {
        let f = fit(vec![2.0, -1.0], 3.5, Some(0.5));
        let x0 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.0, 3.0, 3.0]);
        let max = predict(&f, &x0, PredictMode::Max).unwrap();
        let mid = predict(&f, &x0, PredictMode::Mid).unwrap();
        for (a, b) in max.iter().zip(&mid) {
            assert!((a - (b + 1.5)).abs() < 1e-12);
        }
        let no_lower = fit(vec![2.0, -1.0], 3.5, None);
        assert_eq!(
            predict(&no_lower, &x0, PredictMode::Mid),
            Err(PmlsError::MissingLowerExpectation)
        );
    }

    #[test]
    fn ape_hand_instance() {
        let y = [3.0, 10.0, 1.0, 7.0, 5.0];
        let p = [2.0, 8.0, 1.0, 6.0, 7.5];
        // descending y: 10 (8), 7 (6), 5 (7.5), 3 (2), 1 (1)
        let a3 = ape_top_m(&y, &p, 3, ApePairing::ByTestPoint).unwrap();
        assert!((a3 - (4.0 + 1.0 + 6.25) / 3.0).abs() < 1e-12);
        // independent sorting pairs 10-8, 7-7.5, 5-6
        let s3 = ape_top_m(&y, &p, 3, ApePairing::SortedIndependently).unwrap();
        assert!((s3 - (4.0 + 0.25 + 1.0) / 3.0).abs() < 1e-12);
        let full = ape_top_m(&y, &p, 5, ApePairing::ByTestPoint).unwrap();
        let mse = y.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 5.0;
        assert!((full - mse).abs() < 1e-12);
        let curve = ape_curve(&y, &p, ApePairing::ByTestPoint).unwrap();
        assert!((curve[2] - a3).abs() < 1e-12);
        assert_eq!(
            ape_top_m(&y, &p, 6, ApePairing::ByTestPoint),
            Err(PmlsError::MTooLarge { m: 6, len: 5 })
        );
    }

    #[test]
    fn r2_edge_cases() {
        let y = [4.0, 9.0, 1.0, 6.0];
        assert_eq!(r2_top_m(&y, &y, 3, ApePairing::ByTestPoint).unwrap(), 1.0);
        let mean_top3 = (9.0 + 6.0 + 4.0) / 3.0;
        let flat = [mean_top3; 4];
        assert!(
            r2_top_m(&y, &flat, 3, ApePairing::ByTestPoint)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert_eq!(
            r2_top_m(&[2.0, 2.0, 1.0], &[0.0; 3], 2, ApePairing::ByTestPoint),
            Err(PmlsError::ZeroDenominator { m: 2 })
        );
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[5.0], 4).unwrap();
        assert_eq!(h.iter().filter(|b| b.count > 0).count(), 1);
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let h = histogram(&v, 10).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 101);
        assert_eq!(h[9].count, 11);
        assert_eq!(h[9].right, 100.0);
    }

    #[test]
    fn boxplot_flags_outliers() {
        let mut v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        v.push(100.0);
        let b = five_number(&v).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.upper_whisker, 20.0);
        assert_eq!(b.median, 11.0);
    }

    #[test]
    fn mse_dominates_squared_bias() {
        let s = summarize(&[1.0, 2.5, 0.3, 4.0], 1.2);
        assert!(s.mse >= s.bias * s.bias);
    }
}
