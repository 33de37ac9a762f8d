use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side precondition of an operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The Lagrangian (or a derived quantity) produced a non-finite value.
    #[error("evaluation failed at node {node}: {message}")]
    Evaluation { node: usize, message: String },

    /// The optimizer cannot start from the supplied data.
    #[error("solver setup failed: {0}")]
    Setup(String),

    #[error("malformed grid function data: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
