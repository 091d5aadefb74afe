use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter lies outside the domain where a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The model cannot be fitted to the supplied data.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("design matrix is rank deficient (rank {rank} < {p} columns)")]
    RankDeficient { rank: usize, p: usize },

    /// No finite maximizer exists for the fixed effects.
    #[error("complete separation: fixed effects diverge (last iterate {last:?})")]
    Separation { last: Vec<f64> },

    #[error("optimizer did not converge within {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: Vec<f64> },

    #[error("estimation failed for area {area}: {reason}")]
    Estimation { area: String, reason: String },

    #[error("{failed} of {total} bootstrap replicates failed (limit is 20%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
