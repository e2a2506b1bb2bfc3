//! Half-split difference statistics used as penalties.
//!
//! Every statistic has the same shape: for the top-`n` ranks of some
//! ordering, average a per-row quantity over the upper half `U_n` and over
//! the lower half `L_n`, then take the difference. The sums run over the
//! rows' original values; the ordering only decides membership.

use nalgebra::DVector;

use crate::error::{PmlsError, Result};
use crate::model::{Dataset, OrderedView};

/// Smallest selection size for which both halves hold at least two rows.
pub const MIN_SELECTION: usize = 4;

/// `mean_{U_n} values - mean_{L_n} values`.
pub fn half_difference(values: &[f64], view: &OrderedView, n: usize) -> Result<f64> {
    check_n(n, view.len())?;
    let upper = view.upper_half(n);
    let lower = view.lower_half(n);
    let mu: f64 = upper.iter().map(|&i| values[i]).sum::<f64>() / upper.len() as f64;
    let ml: f64 = lower.iter().map(|&i| values[i]).sum::<f64>() / lower.len() as f64;
    Ok(mu - ml)
}

pub(crate) fn check_n(n: usize, len: usize) -> Result<()> {
    if n < MIN_SELECTION {
        return Err(PmlsError::NTooSmall {
            n,
            min: MIN_SELECTION,
        });
    }
    if n > len {
        return Err(PmlsError::InvalidConfig(format!(
            "selection size {n} exceeds {len} rows"
        )));
    }
    Ok(())
}

/// Penalty statistics for one selection size and one split.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyStats {
    /// Half difference of squared least squares residuals.
    pub upsilon1: f64,
    /// `(a, b)` with `Upsilon2(mu) = a - 2 b mu`; the `mu^2` terms cancel.
    pub upsilon2_affine: (f64, f64),
    /// Half difference of `Y - beta^T X`.
    pub gamma: f64,
    /// Half difference of the least squares residuals.
    pub lambda_stat: f64,
    /// Mean covariate vector over the selected rows.
    pub x_bar: Vec<f64>,
    /// `Upsilon2(mu) - 2 x_bar^T beta Upsilon1` at the given `(beta, mu)`.
    pub delta_hat: f64,
}

impl PenaltyStats {
    pub fn upsilon2(&self, mu: f64) -> f64 {
        let (a, b) = self.upsilon2_affine;
        a - 2.0 * b * mu
    }

    /// `Delta_hat(beta, mu) = a - c^T (beta, mu)` for this split.
    pub fn delta_hat_at(&self, beta: &[f64], mu: f64) -> f64 {
        let xb: f64 = self.x_bar.iter().zip(beta).map(|(x, b)| x * b).sum();
        self.upsilon2(mu) - 2.0 * xb * self.upsilon1
    }

    /// Coefficients `c` of the affine form `a - c^T theta`, `theta = (beta, mu)`.
    pub fn affine_coefficients(&self) -> (f64, DVector<f64>) {
        let p = self.x_bar.len();
        let (a, b) = self.upsilon2_affine;
        let c = DVector::from_fn(p + 1, |j, _| {
            if j < p {
                2.0 * self.upsilon1 * self.x_bar[j]
            } else {
                2.0 * b
            }
        });
        (a, c)
    }
}

/// Computes all penalty statistics over the split of `view` at size `n`.
///
/// `ols_residuals` are `Y - X^T beta_LS` on the full data.
pub fn penalty_stats(
    ds: &Dataset,
    view: &OrderedView,
    n: usize,
    ols_residuals: &[f64],
    beta: &[f64],
    mu: f64,
) -> Result<PenaltyStats> {
    check_n(n, ds.n_rows())?;
    if view.len() != ds.n_rows() || ols_residuals.len() != ds.n_rows() {
        return Err(PmlsError::DimensionMismatch(
            "view or residuals length differs from N".into(),
        ));
    }
    let y = ds.y();
    let y_vals: Vec<f64> = y.iter().copied().collect();
    let y_sq: Vec<f64> = y.iter().map(|v| v * v).collect();
    let d_sq: Vec<f64> = ols_residuals.iter().map(|d| d * d).collect();
    let h: Vec<f64> = ds.residuals(beta).iter().copied().collect();

    let upsilon1 = half_difference(&d_sq, view, n)?;
    let a = half_difference(&y_sq, view, n)?;
    let b = half_difference(&y_vals, view, n)?;
    let gamma = half_difference(&h, view, n)?;
    let lambda_stat = half_difference(ols_residuals, view, n)?;
    let x_bar = selected_mean(ds, view.top(n));
    let mut stats = PenaltyStats {
        upsilon1,
        upsilon2_affine: (a, b),
        gamma,
        lambda_stat,
        x_bar,
        delta_hat: 0.0,
    };
    stats.delta_hat = stats.delta_hat_at(beta, mu);
    Ok(stats)
}

pub(crate) fn selected_mean(ds: &Dataset, rows: &[usize]) -> Vec<f64> {
    let p = ds.n_cols();
    let mut m = vec![0.0; p];
    for &i in rows {
        for (j, mj) in m.iter_mut().enumerate() {
            *mj += ds.x()[(i, j)];
        }
    }
    let k = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= k);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::order_view;
    use nalgebra::DMatrix;

    fn six_point() -> Dataset {
        let x = DMatrix::from_row_slice(6, 1, &[0.5, 1.5, -0.3, 2.0, 1.1, 0.2]);
        let y = DVector::from_column_slice(&[2.0, 4.5, 0.1, 7.3, 3.9, 1.0]);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn identical_rows_give_zero_statistics() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let ds = Dataset::new(x, DVector::from_element(6, 3.0)).unwrap();
        let resid = vec![0.5; 6];
        let view = order_view(&[0.0; 6]);
        let s = penalty_stats(&ds, &view, 6, &resid, &[2.0], 1.0).unwrap();
        assert_eq!(s.upsilon1, 0.0);
        assert_eq!(s.upsilon2(1.0), 0.0);
        assert_eq!(s.gamma, 0.0);
        assert_eq!(s.lambda_stat, 0.0);
        assert_eq!(s.delta_hat, 0.0);
    }

    #[test]
    fn matches_two_loop_oracle() {
        let ds = six_point();
        let resid = vec![0.3, -0.2, 0.9, -1.4, 0.05, 0.6];
        let order_by = [5.0, 1.0, 4.0, 2.0, 6.0, 3.0];
        let view = order_view(&order_by);
        let (beta, mu) = ([1.7], 0.4);
        let n = 5;
        let s = penalty_stats(&ds, &view, n, &resid, &beta, mu).unwrap();

        // ranks by descending `order_by`: rows 4, 0, 2 | 5, 3 for n = 5
        let upper = [4usize, 0];
        let lower = [2usize, 5, 3];
        let avg = |rows: &[usize], f: &dyn Fn(usize) -> f64| {
            let mut acc = 0.0;
            for &i in rows {
                acc += f(i);
            }
            acc / rows.len() as f64
        };
        let y = |i: usize| ds.y()[i];
        let x = |i: usize| ds.x()[(i, 0)];
        let u1 = avg(&upper, &|i| resid[i] * resid[i]) - avg(&lower, &|i| resid[i] * resid[i]);
        let u2 = avg(&upper, &|i| (y(i) - mu).powi(2)) - avg(&lower, &|i| (y(i) - mu).powi(2));
        let g = avg(&upper, &|i| y(i) - beta[0] * x(i)) - avg(&lower, &|i| y(i) - beta[0] * x(i));
        let l = avg(&upper, &|i| resid[i]) - avg(&lower, &|i| resid[i]);
        let xbar = (x(4) + x(0) + x(2) + x(5) + x(3)) / 5.0;
        let delta = u2 - 2.0 * xbar * beta[0] * u1;

        assert!((s.upsilon1 - u1).abs() < 1e-12);
        assert!((s.upsilon2(mu) - u2).abs() < 1e-12);
        assert!((s.gamma - g).abs() < 1e-12);
        assert!((s.lambda_stat - l).abs() < 1e-12);
        assert!((s.delta_hat - delta).abs() < 1e-12);
    }

    #[test]
    fn rejects_tiny_selection() {
        let ds = six_point();
        let view = order_view(&[1.0; 6]);
        let err = penalty_stats(&ds, &view, 3, &[0.0; 6], &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, PmlsError::NTooSmall { n: 3, .. }));
    }

    #[test]
    fn affine_form_agrees_with_direct_evaluation() {
        let ds = six_point();
        let view = order_view(&[0.3, 2.0, 1.0, 0.1, 5.0, 4.0]);
        let s = penalty_stats(
            &ds,
            &view,
            6,
            &[0.1, 0.2, -0.4, 0.5, -0.9, 0.3],
            &[0.7],
            0.0,
        )
        .unwrap();
        let (a, c) = s.affine_coefficients();
        for (beta, mu) in [(0.7, -1.0), (-2.0, 3.5), (0.0, 0.0)] {
            let direct = s.delta_hat_at(&[beta], mu);
            let affine = a - c[0] * beta - c[1] * mu;
            assert!((direct - affine).abs() < 1e-12);
        }
    }
}
