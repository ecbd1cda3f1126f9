use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the equalizer design toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs disagree in size or layout.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A path has zero energy, so energy ratios are undefined.
    #[error("zero energy on path (source {source_index}, mic {mic})")]
    ZeroEnergy { source_index: usize, mic: usize },

    /// An in-band magnitude vanished, so the magnitude derivative is undefined.
    #[error("singular gradient: band {band} at mic {mic} has zero magnitude")]
    SingularGradient { mic: usize, band: usize },

    /// The regularized normal matrix could not be factored.
    #[error("singular normal matrix at bin {bin}; use a positive regularization beta")]
    SingularSystem { bin: usize },

    /// The optimizer received a NaN or infinite gradient.
    #[error("non-finite gradient in {tensor} at index {index}")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A text artifact (coefficient or tap file) failed to parse.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
