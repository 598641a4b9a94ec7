use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the process exit codes used by the command-line
/// front end (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("training diverged at step {step}: {detail}")]
    TrainingDivergence { step: usize, detail: String },

    #[error("incompatible checkpoint: {0}")]
    CheckpointIncompatible(String),

    #[error("score undefined: {0}")]
    UndefinedScore(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::DataIntegrity(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class. 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::UndefinedScore(_) => 2,
            Error::DataIntegrity(_) | Error::CheckpointIncompatible(_) => 3,
            Error::TrainingDivergence { .. } => 4,
            Error::Io { .. } | Error::Tensor(_) => 1,
        }
    }
}
