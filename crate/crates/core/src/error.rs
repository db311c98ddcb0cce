use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("stream was produced by model {stream} but decoder holds model {model}")]
    ModelMismatch { stream: String, model: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AtcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(AtcError::InvalidInput(msg.into()))
}
