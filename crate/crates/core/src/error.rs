use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    IndexOutOfRange { index: usize, num_nodes: usize },

    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("homophily undefined: {0}")]
    UndefinedHomophily(&'static str),

    #[error("too few edges: {0}")]
    TooFewEdges(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot sample {requested} negatives, only {available} candidate pairs exist")]
    InfeasibleSampling { requested: usize, available: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("numerical divergence at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("malformed {what} in {path}: {reason}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Parse {
            what,
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn dims(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
