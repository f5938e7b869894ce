use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver did not converge within {sweeps} sweeps")]
    EigenConvergence { sweeps: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// A user callback produced NaN or infinity.
    #[error("evaluation error: non-finite value in {what} {index}")]
    Evaluation { what: &'static str, index: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
