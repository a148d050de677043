use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid vertex pair ({i}, {j})")]
    InvalidPair { i: u64, j: u64 },

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid vertex subset: {0}")]
    InvalidSubset(String),

    #[error("vertex subset {0:?} is not indistinguishable from outside")]
    NotIndistinguishable(Vec<usize>),

    #[error("operator is not positive definite")]
    NotPositiveDefinite,

    #[error("Green matrix entry ({i}, {j}) = {value} is not strictly positive")]
    NonPositiveGreen { i: usize, j: usize, value: f64 },

    #[error("corrupted state: {0}")]
    CorruptedState(String),

    #[error("walk expansion diverges: spectral radius {0} >= 1")]
    Divergent(f64),

    #[error("reduced Green matrix is inconsistent: {0}")]
    InconsistentReduced(String),

    #[error("insufficient depth: need level {required}, realization has {available}")]
    InsufficientDepth { required: u32, available: u32 },

    #[error("insufficient samples: need at least {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("maximum growth level {0} reached")]
    MaxLevel(u32),
}
