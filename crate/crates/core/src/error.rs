use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("attribute `{attribute}` = {value} outside [{min}, {max}]")]
    Range {
        attribute: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{what} has {len} entries, capacity is {capacity}")]
    Capacity {
        what: &'static str,
        len: usize,
        capacity: usize,
    },
    #[error("invalid vehicle `{id}`: {reason}")]
    InvalidVehicle { id: String, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("route generation error: {0}")]
    Generation(String),
    #[error("scene feature error: {0}")]
    Feature(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("classification error: {0}")]
    Classification(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("vehicle `{vehicle}` on route `{route}`: {source}")]
    Episode {
        vehicle: String,
        route: String,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Innermost error, looking through per-episode tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Episode { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures caused by mismatched artifacts (hashes, seeds, schema versions).
    pub fn is_compatibility(&self) -> bool {
        matches!(self.root(), Error::Compatibility(_))
    }

    /// True for NaN/Inf, divergence and similar numeric breakdowns.
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric(_) | Error::Divergence(_))
    }
}
