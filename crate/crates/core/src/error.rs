use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame bandwidth {bandwidth} Hz exceeds the sample rate {sample_rate} Hz")]
    BandExceeded { bandwidth: f64, sample_rate: f64 },

    #[error("invalid frame spec: {0}")]
    InvalidSpec(String),

    #[error("frame {index} lies outside the schedule span")]
    FrameOutOfSpan { index: usize },

    #[error("cannot calibrate SNR on an all-zero record")]
    CannotCalibrateSnr,

    #[error("filter taps must be non-empty")]
    InvalidTaps,

    #[error("Zadoff-Chu root {root} is not coprime with length {length}")]
    InvalidRoot { root: u32, length: u32 },

    #[error("preamble configuration error: {0}")]
    ConfigLengthError(String),

    #[error("operation requires a detected preamble")]
    RequiresDetection,

    #[error("record has {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("bounding box has zero extent")]
    DegenerateBox,

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("parameter grid axis `{0}` has no values")]
    EmptyAxis(String),

    #[error("unknown grid parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("task graph error: {0}")]
    Dag(String),

    #[error("preamble not found after {attempts} transmissions")]
    SyncFailed { attempts: u32 },

    #[error("task {id} failed: {reason}")]
    TaskFailed { id: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
