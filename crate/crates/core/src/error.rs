use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not positive definite (eigenvalue {eigenvalue:e} below floor {floor:e})")]
    Positivity { eigenvalue: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("row {row} carries zero mass and cannot be projected")]
    ZeroMassRow { row: usize },

    #[error("training set is empty")]
    EmptyTraining,

    #[error("instance too large for exact enumeration: {0}")]
    TooLarge(String),

    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientPopulation {
        class: u32,
        required: usize,
        available: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// Whether the failure is numerical rather than a usage or data problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Positivity { .. } | Error::ZeroMassRow { .. } | Error::NumericalBreakdown(_)
        )
    }

    /// Whether the failure comes from reading or validating input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::BadMagic { .. }
                | Error::Truncated(_)
                | Error::CountMismatch(_)
                | Error::Parse(_)
                | Error::InsufficientPopulation { .. }
                | Error::EmptyTraining
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
