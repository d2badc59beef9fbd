use std::path::PathBuf;

use crate::dynamics::SimState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("integration diverged at x={}, v={}, phi={}", .state.x, .state.v, .state.phi)]
    Diverged { state: SimState },

    #[error(
        "found {count} attractor amplitude cluster(s), expected 2; check the forcing \
         parameters or lengthen the settle time"
    )]
    ClusterCount { count: usize, amplitudes: Vec<f64> },

    #[error("settled amplitude {amplitude} lies within 5% of the threshold {threshold}")]
    AmbiguousLabel { amplitude: f64, threshold: f64 },

    #[error("SMO did not reach the KKT tolerance within {iterations} iterations")]
    Nonconvergence { iterations: usize },

    #[error("dataset must contain both attractor labels")]
    SingleClass,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("phase 1 ended outside the source basin ({found} predicted)")]
    SourceBasin {
        found: crate::oracle::AttractorLabel,
    },

    #[error("buffer holds {available} transitions, {requested} requested")]
    InsufficientData { available: usize, requested: usize },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: expected format {expected}, found {found:?}")]
    Version {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing prerequisite {path}: {hint}")]
    Missing { path: PathBuf, hint: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
