use std::path::PathBuf;

/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid geometry: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("malformed volume header field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("volume of {dims:?} voxels x {components} components exceeds addressable capacity")]
    Capacity { dims: [u64; 3], components: u64 },

    #[error("region is empty")]
    EmptyRegion,

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("need at least {required} samples, got {got}")]
    SampleCount { required: usize, got: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
