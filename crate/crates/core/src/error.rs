use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing constituent AU{0}")]
    MissingAu(u8),
    #[error("AU{code} intensity {value} out of range")]
    InvalidIntensity { code: u8, value: i64 },
    #[error("unrecognized AU code {0}")]
    UnknownAu(i64),
    #[error("PSPI value {0} outside [0, 16]")]
    InvalidPspi(i64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate frame_id {0:?}")]
    DuplicateFrameId(String),
    #[error("no AU prediction for frame {0:?}")]
    MissingPrediction(String),
    #[error("overlap and fill AU sets are inconsistent: {0}")]
    OverlappingSets(String),
    #[error("category {0} has no samples; inverse-frequency weights are undefined")]
    EmptyCategory(String),
    #[error("subject-disjoint split needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent record {frame_id:?}: {message}")]
    InconsistentRecord { frame_id: String, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("K = {k} requires at least K + 1 nodes, graph has {nodes}")]
    KTooLarge { k: usize, nodes: usize },

    #[error("label row {0} is not one-hot")]
    NonOneHotLabel(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("category index {index} out of range for {classes} classes")]
    CategoryOutOfRange { index: usize, classes: usize },

    #[error("image {path:?}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::KTooLarge { .. } | Error::OverlappingSets(_) => {
                ErrorKind::Config
            }
            Error::NumericFailure(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
