use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("degenerate (zero-norm) vector")]
    DegenerateVector,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid class counts: {0}")]
    InvalidCounts(String),
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("not an embedding file (magic {0:?})")]
    NotAnEmbeddingFile([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt embedding file: {0}")]
    CorruptFile(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("failed to write {path}: {source}")]
    WriteError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to read {path}: {source}")]
    ReadError {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(expected: usize, actual: usize) -> Self {
        Error::DimMismatch { expected, actual }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::WriteError {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::ReadError {
            path: path.into(),
            source,
        }
    }
}
