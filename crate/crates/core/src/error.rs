use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("dense Jacobian of {entries} entries exceeds budget of {budget}; use the matrix-free path")]
    Oversize { entries: usize, budget: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64, losses: Vec<f64> },

    #[error("dataset ingestion failed with {} issue(s):\n{}", .0.len(), format_issues(.0))]
    Ingest(Vec<IngestIssue>),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One problem found while ingesting a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestIssue {
    /// 1-based line number in the CSV (header is line 1); 0 when not line-specific.
    pub line: usize,
    pub message: String,
}

fn format_issues(issues: &[IngestIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  line {}: {}", i.line, i.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch { expected: expected.to_vec(), got: got.to_vec() }
    }
}
