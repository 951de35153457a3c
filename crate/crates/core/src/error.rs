use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("symplectic structure needs an even state dimension, got {0}")]
    OddDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },

    #[error("linear system could not be solved: {0}")]
    Singular(String),

    #[error("problem too large for the exact kernel solver: N = {n} exceeds {max}")]
    TooLarge { n: usize, max: usize },

    #[error("empty search grid: {0}")]
    EmptyGrid(&'static str),

    /// `line` is 1-based; 0 when the value did not come from a file line.
    #[error("config error{}: {message}", if *line > 0 { format!(" at line {line}") } else { String::new() })]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
