use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("logit vector needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("logit vector contains a non-finite entry at index {0}")]
    NonFiniteLogit(usize),
    #[error("gamma {0} is outside the supported range")]
    InvalidGamma(f64),
    #[error("bisection did not converge: |sum - 1| = {residual:e} after {iters} iterations")]
    NonConvergence { residual: f64, iters: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("dimension mismatch: expected {expected} classes, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("evaluation run is empty")]
    EmptyRun,
}

pub type Result<T> = std::result::Result<T, Error>;
