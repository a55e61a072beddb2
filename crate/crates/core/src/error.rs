use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CiteError>;

#[derive(Debug, Error)]
pub enum CiteError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    BatchSize(usize),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("operation not available in {mode} assignment mode: {op}")]
    Mode { op: &'static str, mode: String },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CiteError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        CiteError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CiteError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CiteError::Config(_)
            | CiteError::Shape { .. }
            | CiteError::Mode { .. }
            | CiteError::Version { .. } => 2,
            CiteError::Numeric(_) => 4,
            CiteError::Dimension { .. }
            | CiteError::Validation(_)
            | CiteError::BatchSize(_)
            | CiteError::State(_)
            | CiteError::Corrupt { .. }
            | CiteError::Data(_)
            | CiteError::Io { .. } => 3,
        }
    }
}
