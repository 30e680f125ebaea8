use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("layer {layer}: non-finite activation")]
    NonFinite { layer: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss is not finite)")]
    Diverged { epoch: usize, batch: usize },

    #[error("no correctly classified samples for classes {0:?}")]
    DeficientClasses(Vec<usize>),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn shape(layer: usize, message: impl Into<String>) -> Self {
        Error::Shape {
            layer,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than by the filesystem.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
