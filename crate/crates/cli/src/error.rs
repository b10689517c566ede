use thiserror::Error;

/// Failures mapped onto the process exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config or unreadable input (exit 2).
    #[error("{0}")]
    Usage(String),

    /// Training or evaluation produced non-finite numbers (exit 3).
    #[error("{0}")]
    Numerical(String),

    /// Checkpoint or config written by an incompatible version (exit 4).
    #[error("version mismatch: {0}")]
    Version(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Version(_) => 4,
        }
    }
}

impl From<tcvae::Error> for CliError {
    fn from(e: tcvae::Error) -> Self {
        match e {
            tcvae::Error::Training { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("json: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
