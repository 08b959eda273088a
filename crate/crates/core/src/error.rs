use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid UTF-8 in {path} at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus too short: {have} characters, need at least {need}")]
    CorpusTooShort { have: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("segment crosses a word boundary at [{start}, {end})")]
    CrossesBoundary { start: usize, end: usize },

    #[error("word mismatch at item {index}: predicted {pred:?}, gold {gold:?}")]
    WordMismatch {
        index: usize,
        pred: String,
        gold: String,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("EM likelihood decreased from {before} to {after}")]
    LikelihoodDecreased { before: f64, after: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics (divergence, NaN) rather than
    /// bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::LikelihoodDecreased { .. }
        )
    }
}
