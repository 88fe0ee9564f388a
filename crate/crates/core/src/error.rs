use std::path::PathBuf;

/// Errors produced anywhere in the framework.
///
/// Variants are grouped by the exit code the command-line front end maps
/// them to: configuration problems, data problems and numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("empty buffer: no target-domain regions stored")]
    EmptyBuffer,

    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range(_) => 2,
            Error::Shape(_)
            | Error::EmptyMask(_)
            | Error::EmptyBuffer
            | Error::EmptyEvaluation(_)
            | Error::Parse(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Checkpoint(_) => 3,
            Error::Numeric(_) => 4,
            Error::Tensor(_) => 1,
        }
    }
}
