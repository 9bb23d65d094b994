use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for extent {extent} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite input to {0}")]
    NumericInput(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient frames: need {needed}, clip has {available}")]
    InsufficientFrames { needed: usize, available: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("checkpoint schema mismatch: missing {missing:?}, unexpected {extra:?}, reshaped {reshaped:?}")]
    Schema {
        missing: Vec<String>,
        extra: Vec<String>,
        reshaped: Vec<String>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
