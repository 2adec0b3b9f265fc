//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("tensor requiring gradients is not attached to this tape; register it with Tape::leaf first")]
    DetachedTensor,

    #[error("non-finite values produced in {context}")]
    NonFinite { context: String },

    #[error("hypothesis is empty after trimming")]
    EmptyHypothesis,

    #[error("positional encoding dimension {0} must be even")]
    OddPositionalDim(usize),

    #[error("label index {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown label {0:?} (expected entailment, neutral or contradiction)")]
    UnknownLabel(String),

    #[error("pooling shape {rows}x{cols} must multiply to {expected}")]
    PoolShape {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("feature channel count {got} does not match expected dimension {expected}")]
    ChannelMismatch { got: usize, expected: usize },

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    BadFormat { path: String, message: String },

    #[error("checkpoint does not match config: {0}")]
    ConfigMismatch(String),

    #[error("unsupported format version {got} (expected {expected})")]
    Version { got: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn bad_format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::BadFormat {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn malformed_line(
        path: impl Into<String>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::MalformedLine {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
