use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    /// A table invariant failed. The first field names the check.
    #[error("invariant `{check}` violated: {detail}")]
    Invariant { check: String, detail: String },

    #[error("design failed: {0}")]
    Design(String),

    #[error("problem too large: {0}")]
    Size(String),

    #[error("symmetry: {0}")]
    Symmetry(String),

    #[error("uniqueness: {0}")]
    Uniqueness(String),

    #[error("state: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn invariant(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            check: check.into(),
            detail: detail.into(),
        }
    }
}
