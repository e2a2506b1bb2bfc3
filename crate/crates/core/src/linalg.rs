//! Small dense helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{PmlsError, Result};

/// `sigma_min / sigma_max` of `x`; 0 for an all-zero matrix.
pub fn singular_value_ratio(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 1.0;
    }
    let sv = x.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// `[X, 1]`.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    DMatrix::from_fn(n, p + 1, |i, j| if j < p { x[(i, j)] } else { 1.0 })
}

/// Least squares `min ||a x - b||` via Householder QR.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if m < n {
        return Err(PmlsError::RankDeficient { ratio: 0.0 });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let diag_min = (0..n)
        .map(|i| r[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if !(diag_max > 0.0) || diag_min / diag_max < 1e-13 {
        return Err(PmlsError::RankDeficient {
            ratio: if diag_max > 0.0 {
                diag_min / diag_max
            } else {
                0.0
            },
        });
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or(PmlsError::RankDeficient { ratio: 0.0 })
}

/// Solves a symmetric positive definite system, falling back to LU.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => a.clone().try_inverse()?,
    };
    Some((&inv + inv.transpose()) * 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator (0 for fewer than two values).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Sample skewness `m3 / m2^1.5` (population moments); 0 for constant input.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 3 {
        return 0.0;
    }
    let m = mean(values);
    let m2 = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_exact_solution() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_column_slice(&[0.5, -2.0]);
        let b = &a * &x;
        let got = least_squares(&a, &b).unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn least_squares_rejects_collinear_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            least_squares(&a, &b),
            Err(PmlsError::RankDeficient { .. })
        ));
    }

    #[test]
    fn skewness_of_symmetric_sample_is_zero() {
        assert!(skewness(&[-2.0, -1.0, 0.0, 1.0, 2.0]).abs() < 1e-15);
        assert!(skewness(&[0.0, 0.0, 0.0, 10.0]) > 1.0);
    }
}
