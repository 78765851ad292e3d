use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("function space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular{}", match .pivot { Some(p) => format!(" (pivot {p})"), None => String::new() })]
    Singular { pivot: Option<usize> },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    InaccurateSolve { residual: f64, bound: f64 },

    #[error("field is not mean-zero (mean {mean:e})")]
    NotMeanZero { mean: f64 },

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
