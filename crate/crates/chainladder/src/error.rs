use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by parsing, fitting and bootstrap routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input data (CSV or config files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid input (wrong shape, negative cells, bad options).
    #[error("validation error: {0}")]
    Validation(String),

    /// An iterative fit did not reach its convergence criteria.
    #[error("{context}: no convergence after {iterations} iterations")]
    NonConvergence { context: String, iterations: usize },

    /// A linear system required by a fit was singular beyond repair.
    #[error("singular system: {0}")]
    Singular(String),

    /// Too many bootstrap replicates failed to refit.
    #[error("excess bootstrap failures: {failed} of {total} replicates did not converge")]
    ExcessFailures { failed: usize, total: usize },

    /// Filesystem problems while reading inputs or writing outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
