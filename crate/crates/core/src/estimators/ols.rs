//! Least squares baselines.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg;
use crate::model::Dataset;

/// Which variables are centered before the no-intercept solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Centering {
    None,
    YOnly,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    /// Intercept implied by the centering: 0, `mean(Y)`, or
    /// `mean(Y) - mean(X)^T beta`.
    pub intercept: f64,
    /// `Y_i - intercept - beta^T X_i`.
    pub residuals: Vec<f64>,
}

pub fn ols_fit(ds: &Dataset, center: Centering) -> Result<OlsFit> {
    let (n, p) = (ds.n_rows(), ds.n_cols());
    let y_mean = ds.y().mean();
    let x_means: Vec<f64> = (0..p).map(|j| ds.x().column(j).mean()).collect();

    let mut x = ds.x().clone();
    let mut y = ds.y().clone();
    if matches!(center, Centering::YOnly | Centering::Both) {
        y.add_scalar_mut(-y_mean);
    }
    if center == Centering::Both {
        for (j, m) in x_means.iter().enumerate() {
            x.column_mut(j).add_scalar_mut(-m);
        }
    }
    let beta = linalg::least_squares(&x, &y)?;
    let intercept = match center {
        Centering::None => 0.0,
        Centering::YOnly => y_mean,
        Centering::Both => {
            y_mean
                - x_means
                    .iter()
                    .zip(beta.iter())
                    .map(|(m, b)| m * b)
                    .sum::<f64>()
        }
    };
    let beta: Vec<f64> = beta.iter().copied().collect();
    let fitted = ds.linear_predictor(&beta);
    let residuals = (0..n).map(|i| ds.y()[i] - intercept - fitted[i]).collect();
    Ok(OlsFit {
        beta,
        intercept,
        residuals,
    })
}

/// Classical regression with a free intercept, solved on `[X, 1]`.
pub fn ols_with_intercept(ds: &Dataset) -> Result<OlsFit> {
    let z = linalg::with_intercept(ds.x());
    let theta = linalg::least_squares(&z, ds.y())?;
    let p = ds.n_cols();
    let beta: Vec<f64> = theta.iter().take(p).copied().collect();
    let intercept = theta[p];
    let fitted: DVector<f64> = &z * &theta;
    let residuals = (ds.y() - fitted).iter().copied().collect();
    Ok(OlsFit {
        beta,
        intercept,
        residuals,
    })
}
