use thiserror::Error;

/// Errors raised across the auction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("no individual survives the budget filter")]
    EmptyInstance,

    #[error("unit costs are not sorted in non-decreasing order (index {index})")]
    NotCanonical { index: usize },

    #[error("individual {index} cannot be paid within budget (no prefix satisfies the threshold test)")]
    AssumptionViolated { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("instance too large for exhaustive search: n = {n}, limit = {limit}")]
    InstanceTooLarge { n: usize, limit: usize },

    #[error("privacy loss of individual {index} is unbounded (zero noise)")]
    UnboundedPrivacyLoss { index: usize },

    #[error("weights are not uniform in magnitude")]
    NonUniformWeights,

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("fractional optimum selects every individual (zero residual weight)")]
    DegenerateAllOnes,

    #[error("k = {k} outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },

    #[error("kernel mass underflowed to zero")]
    DegenerateKernelMass,

    #[error("linear system is not positive definite")]
    SingularSystem,

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
