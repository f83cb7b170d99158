//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the library.
///
/// The variants map onto the CLI exit codes: `Config` is a usage/config
/// problem (exit 1), `InvalidInput`/`Data`/`Io`/`Image` are data problems
/// (exit 2), and `Numeric` is a numerical failure (exit 3).
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (shape mismatch,
    /// non-finite input, out-of-range argument).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Bad configuration: unknown key, missing field, inconsistent values.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset-level problem: missing directory, no matched pairs,
    /// undecodable file.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure during computation (NaN/Inf loss, residue check).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The numerical backend is missing a required differentiable op.
    #[error("backend capability missing: {0}")]
    Capability(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::InvalidInput(_) | Error::Data(_) | Error::Io(_) | Error::Image(_) => 2,
            Error::Numeric(_) | Error::Capability(_) => 3,
        }
    }
}
