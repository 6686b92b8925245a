use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by data ingestion, the samplers and the comparison drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("binary response `{column}` contains {value} at data row {row}; expected 0 or 1")]
    NotBinary {
        column: String,
        row: usize,
        value: String,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("wrong response kind: {0}")]
    WrongResponseKind(String),
    #[error("invalid likelihood entry at draw {draw}, observation {obs}: {value}")]
    InvalidLikelihood { draw: usize, obs: usize, value: f64 },
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
