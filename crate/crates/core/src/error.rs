use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: duplicate entry for asset `{asset}` on {date}")]
    DuplicateDate {
        row: usize,
        asset: String,
        date: NaiveDate,
    },
    #[error("no usable prices found")]
    EmptySeries,
    #[error("asset `{0}`: {1}")]
    InvalidSeries(String, String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frames are not aligned: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
