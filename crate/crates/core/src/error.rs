//! Error types shared across the crate.

use thiserror::Error;

/// Coarse failure class, used by callers (e.g. the CLI) to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid configuration or arguments.
    Config,
    /// Malformed, missing, or insufficient input data.
    Data,
    /// Non-finite values or other numeric failures.
    Numeric,
    /// Filesystem / serialization failures.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record at line {line}, column {column}: {reason}")]
    MalformedRecord {
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("record nesting depth {depth} exceeds the maximum of {max}")]
    DepthExceeded { depth: usize, max: usize },

    #[error("tree has no leaves")]
    EmptyTree,

    #[error("corpus contains no records")]
    EmptyCorpus,

    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },

    #[error("record has no maskable positions")]
    NoMaskablePositions,

    #[error("need at least {required} records, got {actual}")]
    TooFewRecords { required: usize, actual: usize },

    #[error("window of {required} positions exceeds the maximum of {max}")]
    WindowOverflow { required: usize, max: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at epoch {epoch}; aborting with last good checkpoint")]
    NonFiniteLoss { epoch: usize },

    #[error("checkpoint has no persisted training-set center")]
    MissingCenter,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("user `{user}` has {len} history items; need more than {required}")]
    InsufficientHistory {
        user: String,
        len: usize,
        required: usize,
    },

    #[error("labels contain a single class; classification needs at least two")]
    SingleClassSplit,

    #[error("checkpoint is corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("refusing to overwrite existing artifact `{0}` (pass --force)")]
    ArtifactExists(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::ArtifactExists(_) => ErrorCategory::Config,
            Error::MalformedRecord { .. }
            | Error::DepthExceeded { .. }
            | Error::EmptyTree
            | Error::EmptyCorpus
            | Error::TokenIdOutOfRange { .. }
            | Error::NoMaskablePositions
            | Error::TooFewRecords { .. }
            | Error::InsufficientHistory { .. }
            | Error::SingleClassSplit
            | Error::MissingCenter
            | Error::CorruptCheckpoint(_) => ErrorCategory::Data,
            Error::WindowOverflow { .. }
            | Error::ShapeMismatch { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss { .. } => ErrorCategory::Numeric,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
