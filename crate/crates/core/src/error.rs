use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bpe::BpeError;
use crate::image::ImageError;
use crate::jpeg::JpegError;
use crate::lm::LmError;

/// Top-level error for operations that touch files or span several modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Bpe(#[from] BpeError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("non-finite loss at step {step}; last good checkpoint: {}", last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    NonFiniteLoss {
        step: u64,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("incompatible artifacts: {0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
