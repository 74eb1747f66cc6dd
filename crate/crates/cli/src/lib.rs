//! Batch experiments for the `voxstokes` solver: config parsing, pipeline
//! orchestration and machine-readable output.

pub mod config;
pub mod error;
pub mod initial;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use run::{evaluate, run_experiment, RunOutcome};
