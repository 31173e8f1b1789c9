use std::path::{Path, PathBuf};

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input data, bad configuration, violated preconditions.
    Validation,
    /// I/O and other failures while running a stage.
    Runtime,
    /// The text-generation backend failed or lacks a capability.
    Backend,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate document id `{id}` at line {line} (first seen at line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },

    #[error("document `{id}` at line {line} has no topics")]
    EmptyTopics { id: String, line: usize },

    #[error("unknown source kind `{token}` at line {line}")]
    UnknownSourceKind { token: String, line: usize },

    #[error("unknown query id `{0}`")]
    UnknownQuery(String),

    #[error("unknown document id `{0}`")]
    UnknownDocument(String),

    #[error("document `{id}` has no `{source_kind}` text")]
    MissingText { id: String, source_kind: String },

    #[error("zero vector cannot be normalized")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("prompt of ~{tokens} tokens exceeds the context limit of {limit} tokens")]
    ContextTooLong { tokens: usize, limit: usize },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("backend does not support {0}")]
    CapabilityUnsupported(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("no passage indices found in listwise output: {0:?}")]
    ParseFailure(String),

    #[error("no atomic facts found in decomposition output: {0:?}")]
    DecompositionFailure(String),

    #[error("run for query `{query_id}` has {len} item(s), fewer than cutoff {k}")]
    RunTooShort {
        query_id: String,
        len: usize,
        k: usize,
    },

    #[error("queries missing from qrels: {}", .0.join(", "))]
    MissingQueries(Vec<String>),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("{path}: {source}")]
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
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::ContextTooLong { .. }
            | Error::Transport { .. }
            | Error::CapabilityUnsupported(_)
            | Error::Backend(_) => ErrorCategory::Backend,
            Error::Io { .. } | Error::Json(_) => ErrorCategory::Runtime,
            _ => ErrorCategory::Validation,
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
