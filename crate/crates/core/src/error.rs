use thiserror::Error;

/// Errors surfaced by every layer of the codec, from tensor ops to file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("i/o error at byte {offset}: {detail}")]
    Io { offset: u64, detail: String },

    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("shape mismatch for tensor `{name}`: checkpoint {found:?}, config {expected:?}")]
    ShapeDiff {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error(transparent)]
    File(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Index { .. } => "index",
            Error::Contract(_) => "contract",
            Error::Config(_) | Error::Json(_) => "config",
            Error::NonFinite(_) => "non-finite",
            Error::Io { .. } | Error::File(_) => "io",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::ShapeDiff { .. } => "shape-diff",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
