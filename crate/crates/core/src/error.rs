use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CglError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolver { iterations: usize, residual: f64 },

    /// Raised by implicit substeps that cannot be inverted at the current step size.
    #[error("step size too large (tau = {tau}): {reason}; halve tau and retry")]
    StepSize { tau: f64, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CglError {
    fn from(e: std::io::Error) -> Self {
        CglError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CglError>;
