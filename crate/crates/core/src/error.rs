use std::path::PathBuf;

/// Error type shared by every module of the engine.
#[derive(Debug, thiserror::Error)]
pub enum HiadError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
}

impl HiadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HiadError::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the command-line front end to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            HiadError::Geometry(_)
            | HiadError::Config(_)
            | HiadError::Precondition(_)
            | HiadError::Contract(_) => ErrorCategory::Config,
            HiadError::Io { .. } | HiadError::Format(_) | HiadError::Ingestion(_) => {
                ErrorCategory::Data
            }
            HiadError::Fit(_)
            | HiadError::Numeric(_)
            | HiadError::Calibration(_)
            | HiadError::UndefinedMetric(_) => ErrorCategory::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}

pub type Result<T, E = HiadError> = std::result::Result<T, E>;
