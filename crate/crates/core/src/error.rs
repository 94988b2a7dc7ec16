use thiserror::Error;

/// Errors raised by the calibration and experiment machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("target index {index} out of range for K = {k}")]
    TargetOutOfRange { index: usize, k: usize },

    #[error("dimension mismatch: expected {expected} targets, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-width quantile interval on target {target} (width {width:e})")]
    ZeroWidth { target: usize, width: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
