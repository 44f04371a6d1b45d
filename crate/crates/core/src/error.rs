use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("elements belong to different groups ({0} vs {1})")]
    GroupMismatch(String, String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("method `{0}` is not implemented")]
    NotImplemented(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing metrics in {}", .0.display())]
    MissingMetrics(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
