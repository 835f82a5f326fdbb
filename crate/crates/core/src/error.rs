use thiserror::Error;

use crate::surrogate::HetGpFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integrand underflow: every quadrature node evaluated to -inf")]
    IntegrandUnderflow,

    #[error("invalid integrand: non-finite value {value} at t = {at}")]
    InvalidIntegrand { at: f64, value: f64 },

    #[error("invalid quadrature spec: {0}")]
    InvalidQuadrature(String),

    #[error("laplace failure: {0}")]
    LaplaceFailure(String),

    #[error("not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient sample: need at least {needed} observations, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("insufficient training fraction: m = {m} (needs 3 <= m <= n = {n})")]
    InsufficientTrainingFraction { m: usize, n: usize },

    #[error("perfect fit: residual sum of squares is zero")]
    PerfectFit,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("group too small: school {group} has {size} student(s), need at least 2")]
    GroupTooSmall { group: String, size: usize },

    #[error("degenerate group design: school {group} has a constant predictor")]
    DegenerateGroupDesign { group: String },

    #[error("too few groups to calibrate: {0} (need at least 3)")]
    TooFewGroups(usize),

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("grid too large: {size} points exceeds cap {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("fit failed: {diagnostics}")]
    FitFailed {
        best: Box<HetGpFit>,
        diagnostics: String,
    },

    #[error("all {0} surface points failed")]
    SweepFailed(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
