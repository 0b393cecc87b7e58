use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition. `field` names the
    /// offending argument so service and CLI callers can report it.
    #[error("invalid {field}: {message}")]
    Rejected { field: String, message: String },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("mask generation failed: {0}")]
    MaskGeneration(String),

    #[error("non-finite value in {what}: {stats}")]
    NonFinite { what: String, stats: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("no checkpoint loaded")]
    NoModel,

    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Torch(#[from] tch::TchError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn rejected(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Rejected {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            message: message.into(),
        }
    }
}

macro_rules! ensure_input {
    ($cond:expr, $field:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::rejected($field, format!($($fmt)+)));
        }
    };
}

pub(crate) use ensure_input;
