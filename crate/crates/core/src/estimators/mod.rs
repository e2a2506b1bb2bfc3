//! Least squares baselines and the penalized maximum least squares estimators.

pub mod cell;
pub mod convex;
pub mod first_step;
pub mod ols;
pub mod penalty;
pub mod second_step;

pub use first_step::{pmls_first_step, pmls_improved, FirstStepFit};
pub use ols::{ols_fit, ols_with_intercept, Centering, OlsFit};
pub use penalty::{penalty_stats, PenaltyStats};
pub use second_step::{
    lower_expectation_regression, lower_expectation_sample, pmls_second_step,
    pmls_second_step_improved, upper_expectation_sample, SecondStepFit, TopMeanFit,
};
