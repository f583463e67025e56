use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?}: {reason}")]
    Parse {
        row: u64,
        column: String,
        value: String,
        reason: String,
    },

    #[error("row {row}: {reason}")]
    Invariant { row: u64, reason: String },

    #[error("timestamps not strictly increasing: row {first_row} ({first}) then row {second_row} ({second})")]
    NonMonotone {
        first_row: u64,
        first: String,
        second_row: u64,
        second: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("model file line {line}: {reason}")]
    ModelFormat { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
