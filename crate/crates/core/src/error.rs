use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "non-finite state at step {step} (particle {particle}); dt = {dt} is likely too large"
    )]
    NonFinite { step: u64, particle: usize, dt: f64 },

    #[error("CFL violation: dt = {dt} exceeds the stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("negative density {min} after step")]
    NegativeDensity { min: f64 },

    #[error("partition function is not positive and finite ({0}); beta or the grid is mis-scaled")]
    PartitionUnderflow(f64),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
