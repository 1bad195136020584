use std::path::PathBuf;

use sbm_proxy_core::Error as CoreError;

/// Errors of the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(#[source] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a valid snapshot: {message}")]
    Snapshot { path: PathBuf, message: String },

    #[error("{0}")]
    Shape(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: CoreError,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot encode report: {0}")]
    Report(#[from] serde_json::Error),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for usage, config and shape problems, 3 for
    /// failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) | AppError::ConfigParse { .. } | AppError::Config(_) | AppError::Shape(_) => 2,
            AppError::Snapshot { .. } => 2,
            AppError::Core(CoreError::ShapeMismatch(_) | CoreError::DimensionMismatch { .. }) => 2,
            AppError::Core(CoreError::Config(_)) => 2,
            AppError::Io { .. } | AppError::AtStep { .. } | AppError::Core(_) | AppError::Report(_) => 3,
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
