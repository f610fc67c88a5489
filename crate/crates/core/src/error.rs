use thiserror::Error;

/// All fallible operations in this crate return `Result<T, StamError>`.
#[derive(Debug, Error)]
pub enum StamError {
    #[error("unit has no centroids")]
    EmptyUnit,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("geometry error: {0}")]
    GeometryError(String),

    #[error("non-finite value in input")]
    NonFinite,

    #[error("bad IDX magic number: {0:#010x}")]
    BadMagic(u32),

    #[error("truncated IDX file: need {expected} bytes, have {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("trailing bytes in IDX file: expected {expected} bytes total, have {actual}")]
    TrailingBytes { expected: usize, actual: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input")]
    EmptyInput,

    #[error("winning centroid {index} has no label")]
    UnlabeledCentroid { index: usize },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("validation error: {0}")]
    ValidationError(String),

    #[error("checkpoint version mismatch: found {found}, supported {supported}")]
    VersionMismatch { found: String, supported: u32 },

    #[error("corrupt checkpoint ({context}): {message}")]
    CorruptCheckpoint { context: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StamError>;
