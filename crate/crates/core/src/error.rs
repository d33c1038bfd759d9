use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(#[from] Violation),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty ensemble: {0}")]
    EmptyEnsemble(String),

    #[error("observation at step {step} has zero probability under the model")]
    ZeroProbability { step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("acceptance comparison failed: {0}")]
    Acceptance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_) | Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::Acceptance(_) => 4,
            Error::EmptyEnsemble(_)
            | Error::ZeroProbability { .. }
            | Error::Numerical(_)
            | Error::Io(_) => 3,
        }
    }
}
