use thiserror::Error;

/// Errors raised across the decoding engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called in a state its contract forbids.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A distribution (loaded or received) is not a probability vector.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("generation budget exhausted ({used}/{max})")]
    BudgetExhausted { used: u64, max: u64 },

    /// The executor could not run at all; distinct from a program scoring 0.
    #[error("executor unavailable: {0}")]
    Infrastructure(String),

    #[error("enumeration of {count} sequences exceeds the limit of {limit}")]
    OracleGuard { count: u128, limit: u128 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
