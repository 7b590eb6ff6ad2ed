use thiserror::Error;

/// Errors raised by group algebra, filtering, fusion and the simulation harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rotation angle reached the principal-branch boundary of the logarithm.
    #[error("logarithm domain boundary: rotation angle {angle} rad is not below pi")]
    BranchCut { angle: f64 },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("filter diverged: {0}")]
    Divergence(String),

    #[error("fusion failed: {0}")]
    Fusion(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
