use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("outcome column {0:?} not found")]
    MissingColumn(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("split produced an empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("knot lattice has {size} knots, exceeding the cap of {cap}")]
    LatticeCap { size: u128, cap: usize },

    #[error("degenerate rectangle: lower equals upper in dimension {0}")]
    DegenerateRectangle(usize),

    #[error("initial boosting run produced no trees for a non-constant outcome")]
    NoTrees,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
