use std::fmt;

use thiserror::Error;

/// Pipeline stage a failure originated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Chunking,
    Recall,
    ForwardSampling,
    Precision,
    Generation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Chunking => "chunking",
            Stage::Recall => "stage1-recall",
            Stage::ForwardSampling => "stage2-sampling",
            Stage::Precision => "stage2-scoring",
            Stage::Generation => "stage3-generation",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend unavailable (request {request_id}): {message}")]
    BackendUnavailable { request_id: String, message: String },

    #[error("protocol error (request {request_id}): {message}")]
    Protocol { request_id: String, message: String },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for transport and protocol failures of an LLM backend.
    pub fn is_backend(&self) -> bool {
        matches!(
            self.root(),
            Error::BackendUnavailable { .. } | Error::Protocol { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
