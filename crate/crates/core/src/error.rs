use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid quantizer configuration: {0}")]
    InvalidSpec(String),

    #[error("channel {channel} is all zeros; its scale would be 0")]
    AllZeroChannel { channel: usize },

    #[error("scale for channel {channel} is not positive ({value})")]
    NonPositiveScale { channel: usize, value: f32 },

    #[error("level {level} at index {index} is not representable in format {format}")]
    UnencodableLevel {
        format: &'static str,
        index: usize,
        level: f32,
    },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("truncated input: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("numerical divergence in node {node} ({op})")]
    NumericalDivergence { node: usize, op: &'static str },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
