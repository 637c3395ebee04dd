use alloc::string::String;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty evaluation set")]
    EmptyEvaluationSet,
    #[error("no co-observed variables")]
    NoCoObserved,
    #[error("no eligible donor column for entry ({row}, {col})")]
    NoDonor { row: usize, col: usize },
    #[error("row {0} has no observed entries")]
    FullyMissingRow(usize),
    #[error("column {0} has no observed entries")]
    FullyMissingColumn(usize),
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("rank-deficient basis")]
    RankDeficient,
    #[error("data matrix required: {0}")]
    DataRequired(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("multiple imputation requires stochasticity")]
    NotStochastic,
    #[error("sampler failed after {attempts} attempts")]
    SamplerFailure { attempts: usize },
    #[error("missing component not connected to any observed node")]
    Disconnected,
    #[error("objective increased by {increase:e} at cycle {cycle}")]
    ObjectiveIncrease { cycle: usize, increase: f64 },
    #[error("ascent failure: {0}")]
    AscentFailure(&'static str),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: &str) -> Error {
    Error::InvalidParameter(String::from(msg))
}
