use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Argument(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Resume(String),
    #[error("{0}")]
    Lock(String),
    #[error("{0}")]
    Manifest(String),
    #[error("{0}")]
    Metrics(String),
    #[error("{0}")]
    Numeric(#[from] vct_core::Error),
}

impl CliError {
    /// Stable token used in the `vct-error: <kind>: ...` line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Argument(_) => "argument",
            CliError::Io { .. } => "io",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Resume(_) => "resume",
            CliError::Lock(_) => "lock",
            CliError::Manifest(_) => "manifest",
            CliError::Metrics(_) => "metrics",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Single line, suitable for scripts.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("vct-error: {}: {}", self.kind(), msg)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
