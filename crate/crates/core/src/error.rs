use std::path::PathBuf;

use hmx_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HydraError>;

#[derive(Debug, Error)]
pub enum HydraError {
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },

    #[error("parse error at `{field}`: {msg}")]
    Parse { field: String, msg: String },

    #[error("numerical failure at step {step}: {msg}")]
    Numerical { step: usize, msg: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HydraError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        HydraError::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }

    pub(crate) fn parse(field: impl Into<String>, msg: impl Into<String>) -> Self {
        HydraError::Parse {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
