//! Penalized maximum least squares (PMLS) for linear regression whose
//! errors carry distribution uncertainty.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod simulation;
pub mod tuning;

pub use error::{PmlsError, Result};
pub use model::{Dataset, FitResult, OrderedView, TuningParams, UncertainScenario};
