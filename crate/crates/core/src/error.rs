use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("weight matrix is not hermitian (max |M - M*| = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("weight matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("weight {index} is not positive ({value})")]
    NonpositiveWeight { index: usize, value: f64 },

    #[error("quadratic form z*Mz is negative ({value:e})")]
    NegativeQuadraticForm { value: f64 },

    #[error("quadratic form z*Mz has a non-negligible imaginary part ({imag:e})")]
    NonRealQuadraticForm { imag: f64 },

    #[error("column {column} is numerically dependent on the previous columns")]
    RankDeficient { column: usize },

    #[error("RRE normalization lambda = {re:e}{im:+e}i is not real positive")]
    LambdaNotPositive { re: f64, im: f64 },

    #[error("MPE extrapolant does not exist at k = {k}")]
    MpeNonexistent { k: usize },

    #[error("need at least {needed} vectors, got {got}")]
    InsufficientVectors { needed: usize, got: usize },

    #[error("iterate {index} is not finite")]
    NonFiniteIterate { index: usize },

    #[error("stage k = {k} is not available ({reason})")]
    InvalidStage { k: usize, reason: &'static str },

    #[error("relation violated at k = {k}: {detail}")]
    RelationViolation { k: usize, detail: String },

    #[error("Krylov breakdown at k = {k}")]
    Breakdown {
        k: usize,
        state: Box<crate::krylov::KrylovState>,
    },

    #[error("operation requires a linear problem")]
    NotLinear,

    #[error("I - T is singular")]
    SingularSystem,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("history: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
