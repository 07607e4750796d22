use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context} at {location}: {message}")]
    Parse {
        context: String,
        location: String,
        message: String,
    },

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("length mismatch: {labels} labels for {frames} frames")]
    LengthMismatch { frames: usize, labels: usize },

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("MAP estimation requires a prior")]
    MissingPrior,

    #[error("no ground truth for utterance {0:?}")]
    MissingGroundTruth(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical core rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite { .. })
    }
}
