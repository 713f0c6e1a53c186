use std::path::PathBuf;

/// Errors raised while validating inputs, loading files or running an estimator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("coordinate out of range, line {line}: {field} = {value}")]
    CoordinateOutOfRange {
        line: usize,
        field: String,
        value: f64,
    },

    #[error("dataset empty")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value for `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("point {point:?} is not covered by any partition cell")]
    Uncovered { point: Vec<f64> },

    #[error("grid too large: {points} points (~{bytes} bytes) exceeds cap of {cap} points")]
    GridTooLarge { points: u128, bytes: u128, cap: u128 },

    #[error("not bi-Lipschitz: outside the verifiable strategy class ({0})")]
    NotBiLipschitz(String),

    #[error("bid vector of agent {agent} is not non-increasing: {bids:?}")]
    NonMonotoneBids { agent: usize, bids: Vec<f64> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.into(),
        message: message.into(),
    }
}
