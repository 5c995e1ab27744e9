use std::path::PathBuf;

/// Errors produced by the relclass toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("instance {id}: {msg}")]
    Validation { id: String, msg: String },

    #[error("embedding table line {line}: {msg}")]
    EmbeddingFormat { line: usize, msg: String },

    #[error("levin table line {line}: {msg}")]
    LevinFormat { line: usize, msg: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
