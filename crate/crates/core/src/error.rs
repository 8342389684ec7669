use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error (record {record}): {message}")]
    Schema { record: String, message: String },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: i64,
        y1: i64,
        x2: i64,
        y2: i64,
        reason: &'static str,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("feature map is empty")]
    EmptyFeatureMap,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("every feature row is quiescent")]
    AllQuiescent,

    #[error("degenerate scale: all entries are equal")]
    DegenerateScale,

    #[error("cannot fit a reducer: {0}")]
    RankDeficient(String),

    #[error("symbol vector is empty")]
    EmptySymbols,

    #[error("non-finite value at offset {0}")]
    NonFiniteValue(usize),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("record {record}: no precomputed {what}")]
    MissingPrecomputed { record: String, what: String },

    #[error("record {0}: no feature map available for the third prediction")]
    MissingFeature(String),

    #[error("no non-null final answers")]
    NoAnswers,

    #[error("failed to spawn backend `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("backend handshake failed: {0}")]
    Handshake(String),

    #[error("backend error: {message}{}", raw.as_ref().map(|r| format!(" (reply: {r})")).unwrap_or_default())]
    Backend { message: String, raw: Option<String> },

    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        Error::Backend {
            message: message.into(),
            raw: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by malformed inputs (exit code 1) as opposed to failures
    /// while running the pipeline (exit code 2).
    pub fn is_validation(&self) -> bool {
        if let Error::Record { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Schema { .. }
                | Error::UnknownClass(_)
                | Error::InvalidConfig(_)
                | Error::UnsupportedImage { .. }
                | Error::VersionMismatch { .. }
        )
    }
}
