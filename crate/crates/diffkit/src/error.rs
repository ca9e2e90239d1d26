use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {got:?}")]
    Shape {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor has {len} values but shape {shape:?} needs {needed}")]
    Length {
        shape: Vec<usize>,
        len: usize,
        needed: usize,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("cache does not belong to network `{network}`: {reason}")]
    StaleCache { network: String, reason: String },
    #[error("invalid network `{network}`: {reason}")]
    InvalidNetwork { network: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;
