use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("node {0} is not on the tape")]
    UnknownNode(usize),

    #[error("non-finite loss at coordinate {coordinate}")]
    NonFiniteProbe { coordinate: usize },

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("zero direction vector")]
    ZeroVector,

    #[error("degenerate gradient (norm {0:e})")]
    DegenerateGradient(f64),

    #[error("power iteration collapsed to the zero vector")]
    Collapsed,

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("{context} at byte offset {offset}")]
    Format { context: String, offset: usize },

    #[error("dataset validation failed: {0}")]
    Validation(String),

    #[error("spec mismatch: {0:?}")]
    SpecMismatch(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
