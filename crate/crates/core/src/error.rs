use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum QomError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("strong convexity required: {0}")]
    StrongConvexity(String),

    #[error("curvature not available: {0}")]
    UnsupportedCurvature(String),

    #[error("objective became non-finite at iteration {iteration}")]
    Divergence {
        iteration: usize,
        /// Last iterate whose objective was still finite.
        last_weights: Vec<f64>,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QomError>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(QomError::Parameter(msg.into()))
}
