use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed raster header {path}: {msg}")]
    Header { path: PathBuf, msg: String },

    #[error("data file {path} has {actual} bytes, header implies {expected}")]
    ByteLength {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("negative SAR intensity {value} at sample {index}")]
    NegativeIntensity { index: usize, value: f64 },

    #[error("invalid PGM: {0}")]
    Pgm(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
