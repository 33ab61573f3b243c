use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum FctError {
    #[error("dimension mismatch in {ctx}: {left:?} vs {right:?}")]
    DimMismatch {
        ctx: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("size error: {0}")]
    Size(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("non-finite value at stage `{0}`")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FctError>;
