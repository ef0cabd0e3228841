use thiserror::Error;

/// Error type shared across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    #[error("degenerate operator: {0}")]
    DegenerateOperator(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("nonsmooth point: {0}")]
    NonsmoothPoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
