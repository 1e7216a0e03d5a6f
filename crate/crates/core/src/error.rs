use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("matrix is not positive semi-definite (residual pivot {pivot:e})")]
    NotPsd { pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("event {event}: {count} observations, need more than {required}")]
    TooFewObservations {
        event: String,
        count: usize,
        required: usize,
    },

    #[error("unknown event {0}")]
    UnknownEvent(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate station {station} for event {event}")]
    DuplicateStation { event: String, station: String },

    #[error("grid header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("grid file ended early: expected {expected} values, found {found}")]
    ShortFile { expected: usize, found: usize },

    #[error("point ({s1}, {s2}) lies outside the grid")]
    OutOfDomain { s1: f64, s2: f64 },

    #[error("missing grid value next to ({s1}, {s2})")]
    MissingNeighbor { s1: f64, s2: f64 },

    #[error("no pairs survive thresholding for event {0}")]
    EmptyDataset(String),

    #[error("variogram bin {0} received no pairs; reduce the number of bins")]
    EmptyBin(usize),

    #[error("insufficient stations: {0}")]
    InsufficientStations(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed fit artifact: {0}")]
    Artifact(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for errors caused by inputs rather than by a defect in the tool.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NotSymmetric { .. } | Error::DimensionMismatch(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
