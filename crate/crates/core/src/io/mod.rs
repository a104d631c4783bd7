//! Persistence: line-delimited dataset files with checksummed manifests,
//! binary weight checkpoints, metrics CSVs and the experiment config.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod dataset;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("checksum mismatch for {path}: manifest {expected}, file {got}")]
    Integrity {
        path: String,
        expected: String,
        got: String,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("dataset {path} is empty")]
    EmptyDataset { path: String },
    #[error("unsupported version {got} in {path} (this build reads version {supported}; upgrade the tool or regenerate the file)")]
    Version {
        path: String,
        got: u32,
        supported: u32,
    },
}

pub type IoResult<V> = Result<V, IoError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}
