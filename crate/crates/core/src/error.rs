use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sucs ratio undefined: total required quality is zero")]
    UndefinedRatio,
    #[error("{phase}: conic solver error: {source}")]
    Conic {
        phase: &'static str,
        #[source]
        source: conic::ConicError,
    },
    #[error("{phase}: solver ended with status {status:?}")]
    SolverStatus { phase: &'static str, status: conic::Status },
    #[error("{phase}: {msg}")]
    Numerical { phase: &'static str, msg: String },
    #[error("FFS1 is infeasible ({0})")]
    Infeasible(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PoolingError>;
