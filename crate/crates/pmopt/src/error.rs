use std::path::PathBuf;

use pmopt_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("model failure: {0}")]
    Model(String),
    #[error("dictionary file {path}: {reason}")]
    Dictionary { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit code: 2 configuration, 3 solver, 4 model, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Model(_) | RunError::Dictionary { .. } => 4,
            RunError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RunError::Io { path: path.into(), source }
    }
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput(_) => RunError::Config(e.to_string()),
            CoreError::QpFailure(_) | CoreError::ZeroVariance | CoreError::InfeasibleParameter(_) => {
                RunError::Solver(e.to_string())
            }
            _ => RunError::Model(e.to_string()),
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
