//! Scenario generators, the replication runner and the order-statistic
//! diagnostic.

pub mod diagnostic;
pub mod generate;
pub mod replicate;
pub mod scenario;

pub use diagnostic::{default_m, order_statistic_diagnostic, DiagnosticResult, DEFAULT_TRIALS};
pub use generate::{generate, generate_test};
pub use replicate::{run_replications, ReplicationOptions, ReplicationRun};
pub use scenario::{CovariateLaw, ExperimentConfig, ExperimentId};
