use thiserror::Error;

/// Errors produced anywhere in the emulator pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {n} points, at least {required} required")]
    InsufficientData { n: usize, required: usize },

    /// The correlation matrix could not be factorized. Carries the most
    /// correlated pair of inputs, which is almost always the culprit.
    #[error("correlation matrix is not positive definite (closest inputs {pair:?})")]
    Conditioning { pair: Option<(usize, usize)> },

    #[error("degenerate fit: outputs have zero residual variance")]
    DegenerateFit,

    #[error("tessellation is invalid for this data: {0}")]
    InvalidTessellation(String),

    #[error("no boundary in MAP model")]
    NoBoundary,

    #[error("malformed CSV at row {row}, column {column}: {message}")]
    MalformedCsv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("query point {index} lies outside the training domain")]
    OutOfDomain { index: usize },

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
