use std::path::{Path, PathBuf};

use rvf_tensor::TensorError;
use thiserror::Error;

use crate::formats::weights::WeightsError;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("camera timestamp {t} outside radar coverage [{first}, {last}]")]
    TimestampOutOfRange { t: f64, first: f64, last: f64 },
    #[error("frame {frame}: {message}")]
    Dataset { frame: String, message: String },
    #[error("annotation record {id}: {message}")]
    Annotation { id: u64, message: String },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Divergence { iteration: usize, loss: f64 },
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        CoreError::Json { context: context.into(), source }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CoreError::Divergence { .. })
    }
}
