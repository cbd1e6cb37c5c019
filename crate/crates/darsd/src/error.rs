use thiserror::Error;

/// Errors surfaced by the tensor engine and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric domain: {0}")]
    NumericDomain(String),

    #[error("degenerate vector: zero norm in {0}")]
    DegenerateVector(&'static str),

    #[error("degenerate basis: column {col} lost rank during reorthonormalization")]
    DegenerateBasis { col: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("non-finite loss term `{term}` = {value}")]
    NonFiniteLoss { term: &'static str, value: f64 },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
