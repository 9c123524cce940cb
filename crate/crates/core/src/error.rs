use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected} values, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("non-finite input value at index {0}")]
    NonFiniteInput(usize),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("model parse error: {0}")]
    ModelParse(String),

    #[error("unbound input variable `{0}`")]
    UnboundVariable(String),

    #[error("requirement generation: {0}")]
    Generation(String),

    #[error("coverage undefined for an empty requirement set")]
    EmptyRequirements,

    #[error("LP encoding: {0}")]
    Encoding(String),

    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn artifact(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.into(),
            message: message.into(),
        }
    }
}
