use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by loading, compiling, inference, and evaluation stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("render failed: {0}")]
    Render(String),

    #[error("compile failed: {0}")]
    Compile(String),

    #[error("replay dump incomplete: {missing} of {total} instances have no recorded output (first missing: {first})")]
    ReplayIncomplete {
        missing: usize,
        total: usize,
        first: String,
    },

    #[error("remote backend error: {0}")]
    Remote(String),

    #[error("remote protocol error: {0}")]
    Protocol(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("variant judgements misaligned: {0}")]
    Alignment(String),

    #[error("provenance conflict: {0}")]
    ProvenanceConflict(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
