use thiserror::Error;

/// Errors produced by the graph-cut engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A Cholesky pivot was not strictly positive. `index` is the position in the
    /// permuted elimination order, `original` the row of the input matrix.
    #[error("matrix is not positive definite: pivot {value:e} at step {index} (row {original})")]
    NotPositiveDefinite {
        index: usize,
        original: usize,
        value: f64,
    },

    #[error("singular matrix: zero pivot in column {0}")]
    Singular(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative weight {value} on edge {edge}")]
    NegativeWeight { edge: usize, value: f64 },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
