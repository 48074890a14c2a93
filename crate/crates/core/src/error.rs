use thiserror::Error;

/// Errors produced by any stage of the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("non-numeric value '{value}' in column '{column}' at data row {row}")]
    NonNumeric {
        column: String,
        value: String,
        row: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("degenerate treatment model fit: residual variance is zero")]
    DegenerateFit,

    #[error("logistic regression did not converge (possible separation)")]
    Separation,

    #[error("smoothing failure: {0}")]
    Smoothing(String),

    #[error("estimation failure: {0}")]
    Estimation(String),

    #[error("subclass {index} is empty or too small ({count} units)")]
    EmptySubclass { index: usize, count: usize },

    #[error("bootstrap failure: {0}")]
    Bootstrap(String),
}

pub type Result<T> = std::result::Result<T, Error>;
