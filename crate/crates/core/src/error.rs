use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A rule table, punctuation set, rule file or config entry is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Syntax error in a rule file. Line and column are 1-based.
    #[error("parse error at {line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A malformed record in a line-delimited data file.
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An object was used before it reached the required state, e.g. scoring
    /// against an uncalibrated reference set.
    #[error("invalid state: {0}")]
    State(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("correlation error: {0}")]
    Correlation(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("corrupt index data: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
