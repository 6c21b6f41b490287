use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameter: {0}")]
    Mesh(String),

    #[error("frequency {omega} outside the material validity range [{lo}, {hi}]")]
    FrequencyOutOfRange { omega: f64, lo: f64, hi: f64 },

    #[error("invalid material model: {0}")]
    Material(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("eigensolver failed: {0}")]
    Solver(String),

    #[error("problem too large for dense solve: 2N = {size} exceeds {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
