use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a precondition (shapes, empty inputs, out-of-domain arguments).
    #[error("contract violation: {0}")]
    Contract(String),

    /// User-supplied configuration is invalid (slope, fractions, depths, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Some layer has no positive input-passivity index, so no cascade bound exists.
    #[error("certificate unavailable: {0}")]
    CertificateUnavailable(String),

    #[error("unsupported depth: cascade needs more than 2 layers, got {0}")]
    UnsupportedDepth(usize),

    #[error("invalid bound parameters: {0}")]
    InvalidParameters(String),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFinite { epoch: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
