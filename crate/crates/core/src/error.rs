use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length error: {0}")]
    Length(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("division by zero start value in path {index}")]
    ZeroStart { index: usize },

    #[error("csv error at row {row}: {msg}")]
    CsvRow { row: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("no data rows")]
    EmptyData,

    #[error("numerical failure at epoch {epoch}, batch {batch}: {msg}")]
    Training { epoch: usize, batch: usize, msg: String },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
