use std::path::PathBuf;

/// Errors produced by the re-ranking library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("feature file: bad magic {found:?}, expected \"CCVF\"")]
    BadMagic { found: [u8; 4] },

    #[error("feature file: unsupported version {0}, expected 1")]
    BadVersion(u32),

    #[error("feature file: {found} rows, expected {expected}")]
    RowMismatch { expected: usize, found: usize },

    #[error("feature file: truncated payload, need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero vector cannot be normalized (row {0})")]
    ZeroVector(usize),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss in epoch {epoch}, episode {episode} (query {query})")]
    NonFiniteLoss {
        epoch: usize,
        episode: usize,
        query: String,
    },

    #[error("no evaluable queries ({skipped} skipped)")]
    NoEvaluableQueries { skipped: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
