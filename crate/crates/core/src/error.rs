use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimension {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid raster value: {0}")]
    InvalidValue(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported format: {message}")]
    Format { path: PathBuf, message: String },
    #[error("manifest contradiction: {0}")]
    Contradiction(String),
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("missing fixture: {0}")]
    MissingFixture(String),
    #[error("predictor contract violated: {0}")]
    PredictorContract(String),
    #[error("invalid architecture graph: {0}")]
    Graph(String),
    #[error("data error: {0}")]
    Data(String),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Data,
    Predictor,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Config(_) => ErrorClass::Validation,
            Error::PredictorContract(_) => ErrorClass::Predictor,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
