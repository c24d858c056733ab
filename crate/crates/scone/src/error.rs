use thiserror::Error;

/// Errors surfaced by the attribute-prediction crate.
#[derive(Debug, Error)]
pub enum SconeError {
    #[error("duplicate attribute name: {0}")]
    DuplicateAttribute(String),
    #[error("invalid attribute type tag: {0}")]
    InvalidType(String),
    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),
    #[error("parse error at entry {index}: {message}")]
    ParseError { index: usize, message: String },
    #[error("empty split")]
    EmptySplit,
    #[error("no class has a defined metric value")]
    EmptyEvaluation,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("image load error: {0}")]
    ImageLoadError(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch instances {indices:?}")]
    NonFiniteLoss { epoch: usize, indices: Vec<usize> },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, SconeError>;
