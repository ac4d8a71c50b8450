use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("node index {index} out of range for graph with {node_count} nodes")]
    NodeIndex { index: usize, node_count: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite {quantity} in parameter group `{group}`")]
    NonFinite {
        quantity: &'static str,
        group: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
