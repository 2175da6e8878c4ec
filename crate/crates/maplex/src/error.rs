//! Crate-wide error type.
//!
//! Variants map onto the CLI exit-code contract: parse/validation/io
//! problems exit with code 1, numerical failures (rank deficiency,
//! divergence) with code 2. The `Display` form is a single line of the
//! shape `<code>: <message>` so scripts can dispatch on the first token.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (bad CSV row, unparsable number, bad JSON).
    #[error("parse: {0}")]
    Parse(String),

    /// Structurally valid input that violates a domain invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// Numerical failure: rank-deficient fit, training divergence.
    #[error("numerical: {0}")]
    Numerical(String),

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::Io(_) => 1,
            Error::Numerical(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
