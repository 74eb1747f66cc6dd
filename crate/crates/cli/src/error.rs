use std::path::PathBuf;

use thiserror::Error;
use voxstokes::{Error as CoreError, MaskError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("mask {path}: {source}")]
    Mask { path: PathBuf, source: MaskError },
    #[error("initial data: {0}")]
    InitialData(String),
    #[error("picard iteration stopped after {iterations} iterations without reaching the tolerance")]
    NotConverged { iterations: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::InitialData(_) => 2,
            CliError::Mask { .. } | CliError::Core(CoreError::Mask(_) | CoreError::MaskMismatch) => 3,
            CliError::Core(CoreError::GateUnreachable { .. }) => 4,
            CliError::NotConverged { .. } | CliError::Core(CoreError::Divergence { .. }) => 5,
            CliError::Core(CoreError::Oracle(_)) => 6,
            CliError::Core(_) | CliError::Output(_) => 1,
        }
    }

    /// Short name of the failure class, recorded in the summary.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "mask",
            4 => "gate_unreachable",
            5 => "picard_divergence",
            6 => "oracle_failure",
            _ => "internal",
        }
    }
}
