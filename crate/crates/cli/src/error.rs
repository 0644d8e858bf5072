use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_INTERNAL: i32 = 70;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] gal_core::Error),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Read { .. } => EXIT_INPUT,
            CliError::Write { .. } | CliError::Internal(_) => EXIT_INTERNAL,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &gal_core::Error) -> i32 {
    use gal_core::Error::*;
    match e {
        Iteration { source, .. } => core_exit_code(source),
        NonFiniteLoss { .. } | DegenerateComponent { .. } | ZeroDensity => EXIT_INTERNAL,
        Io { .. }
        | Parse { .. }
        | Json(_)
        | Schema(_)
        | InvalidArgument(_)
        | UnsupportedModality { .. }
        | EmptyDataset(_)
        | Unlabeled { .. }
        | AlreadyLabeled { .. }
        | EmptyClass { .. }
        | DimensionMismatch { .. }
        | GenerationExhausted { .. } => EXIT_INPUT,
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("serialization failed: {e}"))
    }
}
