//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GacrError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus {path} contains no usable records")]
    EmptyCorpus { path: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite activation in encoder layer {layer}")]
    NumericFault { layer: usize },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("generation backend error: {0}")]
    Backend(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing generated snippets for pair {pair_id}: need {needed}, cache holds {present}")]
    MissingSnippets {
        pair_id: String,
        needed: usize,
        present: usize,
    },
}

pub type Result<T> = std::result::Result<T, GacrError>;

impl GacrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GacrError::Io {
            path: path.into(),
            source,
        }
    }
}
