use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the tracking toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The correlation series carries no energy, so no delay can be read off it.
    #[error("no delay estimate: correlation is identically zero")]
    NoEstimate,

    /// Every regret is non-positive; the potential equation has no root.
    #[error("degenerate ensemble: no particle has positive regret")]
    DegenerateEnsemble,

    #[error("not enough training data: {got} vectors, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("a projecting variant was requested but no tree is available; run `train-tree` first")]
    MissingTree,

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
