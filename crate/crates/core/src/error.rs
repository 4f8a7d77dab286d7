//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]; the CLI maps the variants onto
//! process exit codes (configuration → 1, numerical/invariant → 2, I/O → 3).

use thiserror::Error;

/// Errors produced by the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: out-of-range values, missing sections, inconsistent
    /// grids, unparseable files. Named after the offending key where possible.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid input handed to an operation at runtime (grid mismatch,
    /// non-orthogonal basis, degenerate mode, insufficient data).
    #[error("input error: {0}")]
    Input(String),

    /// A numerical contract was violated: solver did not converge, an
    /// invariant check failed, evanescent wave components, etc.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Filesystem / serialization problems.
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) => 1,
            Error::Numerical(_) => 2,
            Error::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        // csv errors carry byte/record positions; keep the full rendering.
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
