use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid dump: {0}")]
    Dump(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    MissingStream(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("no populated buckets in range [{lo}, {hi}] for {metric}")]
    NoPopulatedBuckets { metric: &'static str, lo: f64, hi: f64 },

    #[error("no segments: {0}")]
    NoSegments(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
