use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("topology is not connected")]
    Disconnected,

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),

    #[error("no connected Erdos-Renyi graph after {attempts} attempts (m = {m}, p_c = {p_c})")]
    ConnectivityRetries { m: usize, p_c: f64, attempts: usize },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("divergence detected: {0}")]
    Divergence(String),

    #[error("density estimate clamped on {clamped} of {nodes} nodes")]
    DegenerateDensity { clamped: usize, nodes: usize },

    #[error("every fit on the lambda grid failed")]
    AllFitsFailed,

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
