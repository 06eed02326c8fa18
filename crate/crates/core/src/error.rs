use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index {index} out of range 1..={max}")]
    Range { index: usize, max: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("weight is singular at the domain endpoint (u = {u}, v = {v})")]
    WeightSingularity { u: f64, v: f64 },

    #[error("gram solve is ill-conditioned (estimated condition number {condition:e})")]
    Conditioning { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("matrix exponential overflowed")]
    Overflow,

    #[error("non-finite gradient in {term}")]
    Divergence { term: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}
