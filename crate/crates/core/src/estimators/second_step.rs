//! Second-step estimate of the upper expectation, its improved twin, the
//! `beta = 0` special case and the lower-expectation mirrors.
//!
//! All of them reduce to one problem on a vector `H` ordered descending:
//!
//! ```text
//! min_{mu, n}  (1/n) sum_{j<=n} (H_(j) - mu)^2 + lambda(n) * pen(Gamma_n)
//! ```
//!
//! `Gamma_n` does not involve `mu`, so `mu` is the top-`n` mean and the
//! data term is the top-`n` within variance. Because the halves are taken
//! in `H`'s own order, `Gamma_n >= 0` and the signed and absolute penalty
//! forms agree.

use crate::error::{PmlsError, Result};
use crate::estimators::first_step::FirstStepFit;
use crate::estimators::penalty::{self, MIN_SELECTION};
use crate::linalg;
use crate::model::{order_view, Dataset, TuningParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TopMeanFit {
    pub mu: f64,
    pub n_selected: usize,
    pub lambda: f64,
    pub objective: f64,
    /// `(1/n) sum (H_(j) - mu)^2` over the selection.
    pub within_variance: f64,
    pub gamma: f64,
    /// Original indices of the selected entries, by descending `H`.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondStepFit {
    pub mu_upper: f64,
    pub n_selected: usize,
    pub var_mu_upper: f64,
    /// Sample variance of the selected `H` values.
    pub sigma_tilde_sq: f64,
    pub top: TopMeanFit,
}

/// Default grid over `n`: every size in `[max(4, 0.05 N), N]`.
pub fn default_top_grid(len: usize) -> Vec<usize> {
    let lo = MIN_SELECTION.max(len / 20).min(len);
    (lo..=len).collect()
}

/// Minimizes the within variance plus `lambda(n) * Gamma_n` over `grid`.
/// Ties keep the smallest `n`.
pub fn top_mean_fit(
    h: &[f64],
    grid: &[usize],
    lambda_at: &dyn Fn(usize) -> f64,
    signed: bool,
) -> Result<TopMeanFit> {
    if grid.is_empty() {
        return Err(PmlsError::InvalidConfig("empty selection grid".into()));
    }
    for &n in grid {
        penalty::check_n(n, h.len())?;
    }
    let view = order_view(h);
    let v = view.values();
    let n_max = *grid.iter().max().expect("non-empty grid");

    // Running mean / sum of squared deviations over the ordered prefix.
    let mut prefix = vec![0.0; n_max + 1];
    let mut means = vec![0.0; n_max + 1];
    let mut m2 = vec![0.0; n_max + 1];
    let (mut mean, mut acc) = (0.0, 0.0);
    for k in 1..=n_max {
        let x = v[k - 1];
        prefix[k] = prefix[k - 1] + x;
        let d = x - mean;
        mean += d / k as f64;
        acc += d * (x - mean);
        means[k] = mean;
        m2[k] = acc;
    }

    let mut best: Option<TopMeanFit> = None;
    for &n in grid {
        let half = n / 2;
        let gamma = prefix[half] / half as f64 - (prefix[n] - prefix[half]) / (n - half) as f64;
        let lambda = lambda_at(n);
        let pen = if signed { gamma } else { gamma.abs() };
        let within = m2[n] / n as f64;
        let objective = within + lambda * pen;
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(TopMeanFit {
                mu: means[n],
                n_selected: n,
                lambda,
                objective,
                within_variance: within,
                gamma,
                selected: Vec::new(),
            });
        }
    }
    let mut fit = best.expect("non-empty grid");
    fit.selected = view.top(fit.n_selected).to_vec();
    Ok(fit)
}

fn grid_or_default(n: Option<usize>, len: usize) -> Vec<usize> {
    match n {
        Some(n) => vec![n],
        None => default_top_grid(len),
    }
}

/// Upper-expectation estimate from the top of `Y - X beta`, with
/// `(lambda_tilde, n_lambda_tilde)` from `tuning`.
pub fn second_step_top(ds: &Dataset, beta: &[f64], tuning: &TuningParams) -> Result<TopMeanFit> {
    tuning.validate(ds.n_rows())?;
    let h: Vec<f64> = ds.residuals(beta).iter().copied().collect();
    let grid = grid_or_default(tuning.n_lambda_tilde, h.len());
    top_mean_fit(&h, &grid, &|n| tuning.lambda_tilde_at(n), true)
}

/// Second step after [`pmls_first_step`](super::first_step::pmls_first_step).
pub fn pmls_second_step(
    ds: &Dataset,
    first: &FirstStepFit,
    tuning: &TuningParams,
) -> Result<SecondStepFit> {
    let top = second_step_top(ds, &first.beta, tuning)?;
    let h = ds.residuals(&first.beta);
    let sel: Vec<f64> = top.selected.iter().map(|&i| h[i]).collect();
    let sigma_tilde_sq = linalg::sample_variance(&sel);
    let var_mu_upper =
        second_step_variance(ds, sigma_tilde_sq, first.sigma_star_sq, top.n_selected)?;
    Ok(SecondStepFit {
        mu_upper: top.mu,
        n_selected: top.n_selected,
        var_mu_upper,
        sigma_tilde_sq,
        top,
    })
}

/// Second step after [`pmls_improved`](super::first_step::pmls_improved);
/// the procedure is the same with the improved slope.
pub fn pmls_second_step_improved(
    ds: &Dataset,
    improved: &FirstStepFit,
    tuning: &TuningParams,
) -> Result<SecondStepFit> {
    pmls_second_step(ds, improved, tuning)
}

/// `(sigma_tilde^2 + sigma_*^2 k / (1 - k)) / n` with
/// `k = mean(X)^T mean(X X^T)^{-1} mean(X)` over all rows.
pub fn second_step_variance(
    ds: &Dataset,
    sigma_tilde_sq: f64,
    sigma_star_sq: f64,
    n: usize,
) -> Result<f64> {
    let p = ds.n_cols();
    let mut extra = 0.0;
    if p > 0 {
        let rows = ds.n_rows() as f64;
        let x = ds.x();
        let m = x.row_mean().transpose();
        let second = x.transpose() * x / rows;
        let inv_m =
            linalg::solve_spd(&second, &m).ok_or(PmlsError::RankDeficient { ratio: 0.0 })?;
        let k = m.dot(&inv_m);
        if !(k < 1.0) {
            return Err(PmlsError::Numerical(format!(
                "covariate mean lies on the second-moment boundary (k = {k})"
            )));
        }
        extra = sigma_star_sq * k / (1.0 - k);
    }
    Ok((sigma_tilde_sq + extra) / n as f64)
}

/// `beta = 0` case: `Y` itself is the error. Uses `(lambda, n_lambda)` and
/// applies the penalty signed unless `tuning.signed_penalty` is off.
pub fn upper_expectation_sample(y: &[f64], tuning: &TuningParams) -> Result<TopMeanFit> {
    tuning.validate(y.len())?;
    let grid = grid_or_default(tuning.n_lambda, y.len());
    top_mean_fit(y, &grid, &|n| tuning.lambda_at(n), tuning.signed_penalty)
}

/// Lower expectation of `Y`: the upper procedure on `-Y`, negated.
pub fn lower_expectation_sample(y: &[f64], tuning: &TuningParams) -> Result<TopMeanFit> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut fit = upper_expectation_sample(&neg, tuning)?;
    fit.mu = -fit.mu;
    fit.gamma = -fit.gamma;
    Ok(fit)
}

/// Lower expectation of `Y - X beta` with the second-step tuning.
pub fn lower_expectation_regression(
    ds: &Dataset,
    beta: &[f64],
    tuning: &TuningParams,
) -> Result<TopMeanFit> {
    let mut fit = second_step_top(&ds.negated(), &negate(beta), tuning)?;
    fit.mu = -fit.mu;
    fit.gamma = -fit.gamma;
    Ok(fit)
}

fn negate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(n: usize, lambda: f64) -> TuningParams {
        TuningParams {
            lambda: Some(lambda),
            n_lambda: Some(n),
            lambda_tilde: Some(lambda),
            n_lambda_tilde: Some(n),
            ..TuningParams::default()
        }
    }

    #[test]
    fn constant_values_give_the_constant() {
        let y = vec![4.25; 30];
        for n in [4, 11, 30] {
            let fit = upper_expectation_sample(&y, &fixed(n, 0.3)).unwrap();
            assert_eq!(fit.mu, 4.25);
            assert_eq!(fit.within_variance, 0.0);
        }
        let free = upper_expectation_sample(&y, &TuningParams::default()).unwrap();
        assert_eq!(free.mu, 4.25);
    }

    #[test]
    fn matches_direct_enumeration() {
        let h = [3.1, -0.4, 2.2, 5.0, 4.9, 1.0, 0.3, 2.8, 4.4, -1.5];
        let lambda_at = |n: usize| 0.7 / (n as f64).sqrt();
        let grid: Vec<usize> = (4..=10).collect();
        let fit = top_mean_fit(&h, &grid, &lambda_at, true).unwrap();

        let mut sorted = h.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut best = (f64::INFINITY, 0, 0.0);
        for n in 4..=10 {
            let top = &sorted[..n];
            let mu = top.iter().sum::<f64>() / n as f64;
            let w = top.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let (u, l) = top.split_at(n / 2);
            let g = u.iter().sum::<f64>() / u.len() as f64 - l.iter().sum::<f64>() / l.len() as f64;
            let obj = w + lambda_at(n) * g;
            if obj < best.0 {
                best = (obj, n, mu);
            }
        }
        assert_eq!(fit.n_selected, best.1);
        assert!((fit.objective - best.0).abs() < 1e-12);
        assert!((fit.mu - best.2).abs() < 1e-12);
    }

    #[test]
    fn lower_is_negated_upper_of_negation() {
        let y = [0.5, 2.0, -3.0, 7.5, 1.25, 0.0, 4.0, -2.5];
        let t = fixed(5, 0.2);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let lower = lower_expectation_sample(&y, &t).unwrap();
        let upper = upper_expectation_sample(&neg, &t).unwrap();
        assert_eq!(lower.mu, -upper.mu);
        assert_eq!(lower.n_selected, upper.n_selected);
    }

    #[test]
    fn gamma_is_nonnegative_so_sign_flag_is_immaterial() {
        let y = [1.0, 9.0, 3.5, 2.0, 8.0, 7.5, 0.5, 4.0, 6.0];
        let mut t = TuningParams::default();
        let signed = upper_expectation_sample(&y, &t).unwrap();
        t.signed_penalty = false;
        let unsigned = upper_expectation_sample(&y, &t).unwrap();
        assert!(signed.gamma >= 0.0);
        assert_eq!(signed, unsigned);
    }

    #[test]
    fn variance_without_covariates_is_sigma_over_n() {
        let ds = Dataset::new(
            nalgebra::DMatrix::zeros(6, 0),
            nalgebra::DVector::from_column_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        )
        .unwrap();
        assert_eq!(second_step_variance(&ds, 2.0, 9.0, 4).unwrap(), 0.5);
    }
}
