use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },
    #[error("model file {path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] arbp_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Core(
                arbp_core::Error::NumericFault { .. }
                | arbp_core::Error::OptimizationAborted { .. }
                | arbp_core::Error::Sampling { .. },
            ) => exit::NUMERIC,
            _ => exit::DATA,
        }
    }
}
