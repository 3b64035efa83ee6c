use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive projective depth {0}")]
    NonPositiveDepth(f64),

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("depth {depth} outside [{min}, {max}]")]
    OutOfRange { depth: f64, min: f64, max: f64 },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("expected {expected} depth bins, found {found}")]
    WrongBinCount { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("depth map has no valid pixel")]
    EmptyDepthMap,

    #[error("depth map has invalid pixels where a dense map is required")]
    SparseDepthMap,

    #[error("dimensions {width}x{height} not divisible by {factor}")]
    IndivisibleDimensions {
        width: usize,
        height: usize,
        factor: usize,
    },

    #[error("distribution sums to {0}, expected 1")]
    NotNormalized(f64),

    #[error("function evaluated to a non-finite value at coordinate {0}")]
    NonFiniteEvaluation(usize),

    #[error("no scene box is visible from the camera")]
    DegenerateScene,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) | Error::IndivisibleDimensions { .. } => ErrorKind::Config,
            Error::NonFiniteInput(_)
            | Error::NotNormalized(_)
            | Error::NonFiniteEvaluation(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
