use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QspError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    PsdViolation { min_eigenvalue: f64 },

    #[error("channel is not gen-extreme: Choi rank {rank} exceeds d = {d}")]
    NotGenExtreme { rank: usize, d: usize },

    #[error("heralded failure: {0}")]
    HeraldedFailure(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("numerical contract failed: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, QspError>;

impl QspError {
    /// Process exit status: 1 for invalid input, 2 for a failed numerical contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            QspError::Numerical(_) | QspError::HeraldedFailure(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        QspError::Validation(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        QspError::DimensionMismatch(msg.into())
    }
}
