use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row ({s}, {a}) sums to 1 {residual:+e}")]
    RowSum { s: usize, a: usize, residual: f64 },

    #[error("entry {location} is negative or not finite: {value}")]
    NegativeEntry { location: String, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("no convergence after {max_iter} iterations")]
    NoConvergence { max_iter: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no samples")]
    EmptySamples,

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    #[error("chain is reducible")]
    Reducible,

    #[error("chain is periodic with period {0}")]
    Periodic(usize),

    #[error("reset kernel entry ({s}, {t}) is not strictly positive")]
    NonPositiveResetKernel { s: usize, t: usize },

    #[error("index convention violated: {0}")]
    IndexConvention(String),

    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("validation error at {location}: {message}")]
    Validation { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI error summary.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RowSum { .. } => "RowSumError",
            Error::NegativeEntry { .. } => "NegativeEntryError",
            Error::Shape(_) => "ShapeError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::SingularSystem => "SingularSystem",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::EmptyDataset => "EmptyDataset",
            Error::EmptySamples => "EmptySamples",
            Error::NegativeVariance(_) => "NegativeVariance",
            Error::Reducible => "Reducible",
            Error::Periodic(_) => "Periodic",
            Error::NonPositiveResetKernel { .. } => "NonPositiveResetKernel",
            Error::IndexConvention(_) => "IndexConventionError",
            Error::Replicate { .. } => "ReplicateError",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }
}
