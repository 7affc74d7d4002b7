use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),

    #[error("no station has any observation")]
    AllMissing,
    #[error("no target timestamp lies within the source span")]
    EmptyOverlap,
    #[error("negative wind speed {0}")]
    NegativeSpeed(f64),
    #[error("requested {k} stations but only {available} are available")]
    KTooLarge { k: usize, available: usize },
    #[error("time axes are not aligned: {0}")]
    Misaligned(String),
    #[error("no valid samples could be built")]
    NoSamples,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("positional embedding width {0} is odd")]
    OddWidth(usize),
    #[error("batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("graph not recorded: {0}")]
    GraphNotRecorded(String),
    #[error("sample set carries no normalization statistics")]
    UnnormalizedInput,
    #[error("split {0} is empty")]
    SplitEmpty(String),
    #[error("checkpoint does not match the expected model configuration")]
    ConfigMismatch,

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("calibration needs a non-empty training split")]
    EmptyTrain,
    #[error("channel count mismatch: map has {expected}, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("metric input is empty")]
    EmptyInput,
    #[error("every cell is degenerate ({0} cells excluded)")]
    AllCellsDegenerate(usize),
    #[error("baseline and truth share no time span")]
    NoTemporalOverlap,
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::KTooLarge { .. } | Error::OddWidth(_) | Error::ConfigMismatch => {
                ErrorKind::Config
            }
            Error::NonFiniteGradient(_)
            | Error::NonFiniteLoss(_)
            | Error::GraphNotRecorded(_)
            | Error::ShapeMismatch(_)
            | Error::BatchTooSmall(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
