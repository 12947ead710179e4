use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or input shape is outside the accepted domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates a structural requirement (manifest, split, labels).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("malformed data at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("image codec error: {0}")]
    Codec(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by reading or writing files rather than by bad inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::File { .. } | Error::Codec(_))
    }
}
