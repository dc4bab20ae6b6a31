//! Error taxonomy shared by every module in the crate.
//!
//! Variants are grouped by what the caller can do about them: `Config`
//! failures mean the experiment description is wrong, `Format` failures mean
//! an input file is corrupt, `Numerical` failures mean an algorithm could not
//! finish on otherwise valid data, and `Contract` failures mean a function
//! was called with arguments that violate its preconditions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment configuration (unknown keys, out-of-range values,
    /// unknown model or layer names).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset or checkpoint bytes. The message names the file and
    /// byte offset where validation failed.
    #[error("format error: {0}")]
    Format(String),

    /// An algorithm failed on valid input: non-convergence, non-finite loss,
    /// or a numerically degenerate system that has no defined answer.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A function precondition was violated: shape mismatch, empty input,
    /// parameter outside its documented range.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
