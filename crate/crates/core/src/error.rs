use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition row ({state}, {action}) has row sum {sum}")]
    RowSum { state: usize, action: usize, sum: f64 },

    #[error("transition row ({state}, {action}) has negative entry {value} at successor {next}")]
    NegativeTransition {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },

    #[error("initial distribution has row sum {sum}")]
    InitialSum { sum: f64 },

    #[error("initial distribution has negative entry {value} at state {state}")]
    InitialNegative { state: usize, value: f64 },

    #[error("gamma out of range: {0} (must lie strictly inside (0, 1))")]
    GammaOutOfRange(f64),

    #[error("non-finite reward at ({state}, {action})")]
    NonFiniteReward { state: usize, action: usize },

    #[error("policy row {state} has row sum {sum}")]
    PolicyRow { state: usize, sum: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("window length {got} does not match delay {expected}")]
    WindowLength { expected: usize, got: usize },

    #[error("delta_tau {delta_tau} exceeds delta {delta}")]
    DelayOrder { delta: usize, delta_tau: usize },

    #[error("augmented space too large: {size} states exceeds budget {budget}")]
    BudgetExceeded { size: u128, budget: u64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step after termination")]
    Terminated,

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
