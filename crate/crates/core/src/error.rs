use thiserror::Error;

use crate::linalg::LinalgError;

/// Broad class of a failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("NaN or infinite value at row {row}, column `{col}`")]
    NaNValue { row: usize, col: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("invalid group `{id}`: {reason}")]
    InvalidGroup { id: String, reason: String },
    #[error("too few groups: need at least {needed}, have {have}")]
    TooFewGroups { needed: usize, have: usize },
    #[error("index ({j}, {k}) out of range for group of size {n}")]
    IndexOutOfRange { j: usize, k: usize, n: usize },
    #[error("parameter outside its domain: {0}")]
    DomainError(String),
    #[error("degenerate weights: sum of xi' W xi is not positive")]
    DegenerateWeights,
    #[error("degenerate residuals: every treatment residual is zero")]
    DegenerateResiduals,
    #[error("loss became non-finite at iteration {0}; step size too large?")]
    NonFiniteLoss(usize),
    #[error("singular design matrix (condition number {0:e})")]
    SingularDesign(f64),
    #[error("weighted treatment residual denominator is numerically zero")]
    SingularDenominator,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no {what} available for the {family} family")]
    UnsupportedFamily { family: String, what: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("optimisation failed: {0}")]
    OptimFail(String),
    #[error("ARMA specification is not stationary")]
    NonStationary,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidConfig(_) | UnsupportedFamily { .. } | TooFewGroups { .. } | DomainError(_) => {
                ErrorKind::Config
            }
            MissingColumn(_) | NonNumericCell { .. } | NaNValue { .. } | EmptyFile | InvalidGroup { .. }
            | EmptyInput(_) | Io(_) | Csv(_) | Json(_) | IndexOutOfRange { .. } => ErrorKind::Data,
            DegenerateWeights | DegenerateResiduals | NonFiniteLoss(_) | SingularDesign(_)
            | SingularDenominator | NotPositiveDefinite | OptimFail(_) | NonStationary => ErrorKind::Numeric,
        }
    }
}

impl From<LinalgError> for Error {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotPositiveDefinite => Error::NotPositiveDefinite,
            LinalgError::DimensionMismatch { expected, got } => {
                Error::InvalidConfig(format!("dimension mismatch: expected {expected}, got {got}"))
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
