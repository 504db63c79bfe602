//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Channel or index range outside the tensor.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid argument value (non-positive resize factor and the like).
    #[error("argument error: {0}")]
    Arg(String),

    /// Training aborted (non-finite loss or gradient).
    #[error("training error: {0}")]
    Train(String),

    /// Checkpoint file carries an unsupported format version.
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    /// Malformed checkpoint contents.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by user input (bad paths, bad flags, bad
    /// configs) rather than internal failures; the CLI maps these to exit
    /// code 2.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Arg(_)
                | Error::Io { .. }
                | Error::Image { .. }
                | Error::CheckpointVersion { .. }
                | Error::Checkpoint(_)
        )
    }
}
