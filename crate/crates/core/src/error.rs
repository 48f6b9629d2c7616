use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in layer `{layer}`: {detail}")]
    Dimension { layer: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("corrupt checkpoint (tensor `{tensor}`): {detail}")]
    CorruptCheckpoint { tensor: String, detail: String },

    #[error("dtype mismatch for tensor `{tensor}`: checkpoint has {found}, expected {expected}")]
    DtypeMismatch {
        tensor: String,
        found: String,
        expected: String,
    },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("infeasible compression: {0}")]
    InfeasibleCompression(String),

    #[error("training diverged at epoch {epoch} (last good epoch {last_good_epoch})")]
    Diverged { epoch: usize, last_good_epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
