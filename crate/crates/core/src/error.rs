use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum MbtError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: String, reason: String },

    #[error("incompatible specification: {0}")]
    IncompatibleSpec(String),

    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid cell at row {row}, column `{column}`: {reason}")]
    InvalidCell {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),

    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),

    #[error("unsupported model format version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error("model schema violation: {0}")]
    Schema(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MbtError> = std::result::Result<T, E>;

pub(crate) fn mismatch(
    context: impl Into<String>,
    expected: impl ToString,
    actual: impl ToString,
) -> MbtError {
    MbtError::DimensionMismatch {
        context: context.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> MbtError {
    MbtError::InvalidArgument {
        name: name.into(),
        reason: reason.into(),
    }
}
