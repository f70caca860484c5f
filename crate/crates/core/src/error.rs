use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid depth raster: {0}")]
    InvalidDepth(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular matrix")]
    Singular,

    #[error("non-finite loss {loss} at step {step}: {diagnostic}")]
    NonFiniteLoss {
        step: usize,
        loss: f64,
        diagnostic: String,
    },

    #[error("{}: parse error at byte {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("unsupported container version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
