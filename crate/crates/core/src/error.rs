use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon of depth {depth} exceeds data length {len}")]
    HorizonExceedsData { depth: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equality constraints are infeasible (residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("quadratic program is unbounded below along a feasible direction")]
    Unbounded,

    #[error("solver did not converge after {iterations} iterations (optimality residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("observability matrix of depth {depth} has rank {rank} < {order}")]
    Unobservable { depth: usize, rank: usize, order: usize },

    #[error("identification failed: {0}")]
    Identification(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
