use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("empty attention support")]
    EmptySupport,
    #[error("empty sequence")]
    EmptySequence,
    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

pub type Result<T, E = NdError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NdError {
    NdError::Shape {
        op,
        detail: detail.into(),
    }
}
