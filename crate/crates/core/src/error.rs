use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("axis {axis}: increment {delta}° exceeds the maximum position increment {mpi}°")]
    IncrementTooLarge { axis: usize, delta: f64, mpi: f64 },

    #[error("camera radius must be positive, got {0}")]
    InvalidRadius(f64),

    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),

    #[error("action index {index} out of range for joint {joint} ({available} actions)")]
    InvalidAction {
        joint: usize,
        index: usize,
        available: usize,
    },

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("trajectory was recorded with different parameters (fingerprint {recorded:#x}, current {current:#x})")]
    StaleTrajectory { recorded: u64, current: u64 },

    #[error("weight file {path}: {reason}")]
    WeightFile { path: PathBuf, reason: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("accuracy is undefined for a cell with zero episodes")]
    EmptyCell,

    #[error("value {value}° is not on the grid axis")]
    OffGrid { value: f64 },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Csv(String),

    #[error("{0} already holds a run; pass --force to overwrite or --resume to continue")]
    OutputExists(PathBuf),

    #[error("training stopped: {0}")]
    Aborted(String),

    #[error("worker {worker}: {message}")]
    Worker { worker: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
