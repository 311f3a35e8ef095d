use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed on-disk data. `row` is 1-based (header excluded) for CSV inputs.
    #[error("format error{}: {msg}", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Format { row: Option<usize>, msg: String },

    #[error("archive is empty after exclusion")]
    EmptyArchive,

    #[error("image decode/encode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            row: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn format_at(row: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            row: Some(row),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the data rather than the caller's arguments.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidInput(_))
    }
}
