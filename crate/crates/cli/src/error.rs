use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong between the command line and the library.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: data row {row}, column {col}: {value:?} is not a finite number")]
    NonNumericCell { path: PathBuf, row: usize, col: usize, value: String },
    #[error(
        "{path} contains {count} gap cell(s) (first at data row {row}, column {col}) \
         and gap interpolation is disabled"
    )]
    GapsPresent { path: PathBuf, count: usize, row: usize, col: usize },
    #[error("{path}: channel {label:?} has no numeric samples to interpolate from")]
    EmptyChannel { path: PathBuf, label: String },
    #[error("{path} has a header row but no samples")]
    NoSamples { path: PathBuf },
    #[error("downsample factor must be at least 1")]
    ZeroDownsample,
    #[error("gradient check failed: worst relative error {worst:e} exceeds {tolerance:e}")]
    GradcheckFailed { worst: f64, tolerance: f64 },
    #[error(transparent)]
    Core(#[from] gcpairs::Error),
    #[error("cannot serialize results: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
