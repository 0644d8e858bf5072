use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation `{op}` does not support {modality} data")]
    UnsupportedModality { op: &'static str, modality: String },

    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),

    #[error("example {index} is unlabeled")]
    Unlabeled { index: usize },

    #[error("example {index} is already labeled")]
    AlreadyLabeled { index: usize },

    #[error("class {class} has no examples")]
    EmptyClass { class: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("mixture component {component} collapsed after re-seeding")]
    DegenerateComponent { component: usize },

    #[error("generation produced no acceptable samples in {draws} draws")]
    GenerationExhausted { draws: usize },

    #[error("every class has zero density at the query point")]
    ZeroDensity,

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
