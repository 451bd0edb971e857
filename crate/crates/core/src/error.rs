use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token id {id} lies in the speech range and cannot be decoded as text")]
    SpeechTokenInText { id: u32 },

    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("context of {len} tokens exceeds the model's maximum sequence length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("no usable preference pairs: all candidate scores are equal")]
    NoUsablePairs,

    #[error("judge transport failed after {attempts} attempts: {message}")]
    JudgeTransport { attempts: usize, message: String },

    #[error("malformed judge response: {0}")]
    JudgeResponse(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid field `{field}`: {message}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("checkpoint version mismatch: expected `{expected}`, found `{found}`")]
    VersionMismatch { expected: String, found: String },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("shape mismatch for array `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing array `{0}`")]
    MissingArray(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
