use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate embedding: zero or non-finite vector")]
    DegenerateEmbedding,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid embedding set: {0}")]
    InvalidSet(String),

    #[error("row {row} is not normalized (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("not a {kind} file")]
    BadMagic { kind: &'static str },

    #[error("unsupported {kind} version {version}")]
    UnsupportedVersion { kind: &'static str, version: u16 },

    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u8),

    #[error("truncated: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("trailing bytes: expected {expected} payload bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },

    #[error("header overflow: {0}")]
    Overflow(String),

    #[error("invalid attention map: {0}")]
    InvalidAttention(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cost matrix contains NaN")]
    NanCost,

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("empty class list")]
    EmptyClassList,

    #[error("unencoded prompt: {0:?}")]
    UnencodedPrompt(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error ({context}): {source}")]
    Data {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the image or class it belongs to.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Data {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
