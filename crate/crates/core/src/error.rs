use thiserror::Error;

/// Errors surfaced by the library. Failure outputs of learners (⊥) are not
/// errors; see [`crate::parity::LearnOutcome`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("bit vectors must have positive length")]
    EmptyVector,
    #[error("invalid bit string {0:?}")]
    BadBitString(String),
    #[error("cannot sample from an empty affine subspace")]
    EmptySubspace,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("outcome spaces differ between neighboring databases")]
    OutcomeSpaceMismatch,
    #[error("domain of {size} points is too large (limit {limit})")]
    DomainTooLarge { size: u128, limit: u128 },
    #[error("instance too large for exact enumeration: {0}")]
    InstanceTooLarge(String),
    #[error("empty database")]
    EmptyDatabase,
    #[error("empty hypothesis class")]
    EmptyClass,
    #[error("inconsistent database: {0}")]
    InconsistentDatabase(String),
    #[error("label {label} not valid under the {convention} convention")]
    BadLabel { label: i8, convention: &'static str },
    #[error("insufficient samples: need more than {required}, have {available}")]
    InsufficientSamples { required: usize, available: usize },
    #[error("index {index} out of range for database of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("privacy budget exceeded at index {index}: spent {spent} + {requested} > cap {cap}")]
    BudgetExceeded { index: usize, spent: f64, requested: f64, cap: f64 },
    #[error("index {0} was already charged; simulated queries need fresh entries")]
    IndexReused(usize),
    #[error("randomizer violates {epsilon}-local privacy: {detail}")]
    NotPrivate { epsilon: f64, detail: String },
    #[error("randomizer rows must sum to 1: {0}")]
    NotStochastic(String),
    #[error("randomizer is not transparent (no exact transition probabilities)")]
    NotTransparent,
    #[error("conditioning history has zero probability at the reference input")]
    ImpossibleHistory,
    #[error("query function value {value} exceeds range bound {bound}")]
    QueryOutOfRange { value: f64, bound: f64 },
    #[error("noninteractive plan already executed")]
    PlanFrozen,
    #[error("adaptive strategy detected: queries submitted after answers were revealed")]
    AdaptiveStrategy,
    #[error("invalid parameter {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn param_owned(key: String, reason: impl Into<String>) -> Self {
        Error::Config { key, reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
