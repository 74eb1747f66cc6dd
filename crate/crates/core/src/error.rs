use thiserror::Error;

use crate::mild::{HorizonAttempt, IterationLog};

/// Errors raised while reading a mask file.
#[derive(Debug, Error)]
pub enum MaskError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid character {ch:?} at line {line}")]
    InvalidCharacter { line: usize, ch: char },
    #[error("empty domain")]
    EmptyDomain,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("fields live on different masks")]
    MaskMismatch,
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("eigenvalue {index} is not positive ({value:e})")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("fractional power overflows: s = {s}, log(lambda_max) = {log_lambda}")]
    Range { s: f64, log_lambda: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("trajectories are sampled on different time grids")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("smallness gate unreachable; best attempt {best:?}")]
    GateUnreachable { best: Option<HorizonAttempt> },
    #[error("Picard iteration does not contract after {} steps", log.steps.len())]
    Divergence { log: Box<IterationLog> },
    #[error("oracle failure: {0}")]
    Oracle(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
