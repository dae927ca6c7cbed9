use thiserror::Error;

/// Errors raised by the simulation and identification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("index {index} out of range for {what} (valid 1..={len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("admissible set is empty: upper bound {upper} <= lower bound {lower}")]
    EmptyAdmissible { lower: f64, upper: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("optimization failed: {0}")]
    OptimizationFailure(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("ensemble has no successful paths ({failed} failed)")]
    EmptyEnsemble { failed: usize },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
