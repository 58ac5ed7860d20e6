use std::path::PathBuf;

use thiserror::Error;

use crate::model::RobustnessMetric;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric {metric} is unsupported here: {reason}")]
    UnsupportedMetric {
        metric: RobustnessMetric,
        reason: &'static str,
    },

    #[error("invalid score vector: {0}")]
    InvalidScores(String),

    #[error("class index {index} out of range for {count} classes")]
    ClassOutOfRange { index: usize, count: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Errors caused by bad user input, reported before any sampling starts.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain(_)
                | Error::ClassOutOfRange { .. }
                | Error::UnsupportedMetric { .. }
                | Error::Io { .. }
                | Error::Parse { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
