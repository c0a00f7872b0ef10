use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, field `{field}`: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        field: String,
        message: String,
    },
    #[error("{path}: duplicate date {date} (row {row})")]
    DuplicateDate {
        path: PathBuf,
        date: chrono::NaiveDate,
        row: usize,
    },
    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),
    #[error("calendar is empty after alignment")]
    EmptyCalendar,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("series too short: need {needed} bars, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at {0}")]
    Divergence(String),
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("architecture mismatch: file holds {found}, expected {expected}")]
    ArchMismatch { expected: String, found: String },
    #[error("missing price for {stock} on {date}")]
    MissingPrice {
        stock: String,
        date: chrono::NaiveDate,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
