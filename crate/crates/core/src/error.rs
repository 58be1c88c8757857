use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum AsifError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument `{name}`: {detail}")]
    InvalidArgument { name: &'static str, detail: String },

    #[error("index {index} out of range for {what} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("parse error in {source_name} at offset {offset}: {detail}")]
    Parse {
        source_name: String,
        offset: u64,
        detail: String,
    },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AsifError> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> AsifError {
    AsifError::InvalidArgument {
        name,
        detail: detail.into(),
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> AsifError {
    AsifError::Shape {
        op,
        detail: detail.into(),
    }
}
