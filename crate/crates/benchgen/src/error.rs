use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),

    #[error("no applicable disease left for patient (age {age}, {sex})")]
    NoApplicableDisease { age: u32, sex: String },

    #[error("knowledge graph cannot supply {wanted} patients: {reason}")]
    Exhausted { wanted: usize, reason: String },

    #[error("llm request failed: {0}")]
    Llm(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] tracedr_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GenError::Io {
            path: path.into(),
            source,
        }
    }
}
