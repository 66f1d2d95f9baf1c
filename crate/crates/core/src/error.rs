//! Error type shared across the simulator.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Noise-level computation with no detected signal to normalize against.
    #[error("noise level undefined: detected signal is zero")]
    ZeroSignal,

    /// Correlation histogram has no defined peak (empty or all-zero input).
    #[error("no correlation peak: {0}")]
    NoPeak(String),

    /// Min-max normalization of a constant image.
    #[error("cannot normalize a constant image")]
    ConstantImage,

    /// Malformed config, scenario, pattern, or tag file.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
