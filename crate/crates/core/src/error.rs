use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid load: {0}")]
    InvalidLoad(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("stiffness matrix is singular (pivot {pivot:e} at dof {dof})")]
    Singular { dof: usize, pivot: f64 },
    #[error("equilibrium-solve budget exhausted after {consumed} solves")]
    BudgetExhausted { consumed: u64 },
    #[error("topology solve interrupted by budget after {consumed} solves")]
    SolveInterrupted { consumed: u64, design: Vec<f64> },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
