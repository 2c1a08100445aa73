use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    FaceIndex {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("token block length {len} outside [{min}, {max}]")]
    BlockLength { len: usize, min: usize, max: usize },
    #[error("sequence length mismatch: {0}")]
    Length(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
