use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("video produced no decodable frames: {0}")]
    EmptyVideo(PathBuf),

    #[error("decoder failed: {0}")]
    Decoder(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error ({backend}): {message}")]
    Backend {
        backend: String,
        message: String,
        retryable: bool,
    },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid segment range [{start}, {end}) for signal of length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },

    #[error("penalty must be positive and finite, got {0}")]
    InvalidPenalty(f64),

    #[error("oracle limited to n <= {limit}, got {n}")]
    OracleLimit { n: usize, limit: usize },

    #[error("label validation unavailable: {0}")]
    ValidationUnavailable(String),

    #[error("no validated label anchors")]
    EmptyAnchors,

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn backend(backend: impl Into<String>, message: impl Into<String>, retryable: bool) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
            retryable,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }
}
