use thiserror::Error;

#[derive(Debug, Error)]
pub enum EitError {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("{artifact} mismatch: expected {expected}, found {found}")]
    Incompatible {
        artifact: String,
        expected: String,
        found: String,
    },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Diff(#[from] diffkit::DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EitError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> EitError {
    EitError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(EitError::Dimension { what, expected, got })
    }
}
