use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorruptError {
    #[error("unknown corruption kind `{0}`")]
    UnknownKind(String),
    #[error("severity {0} is outside 0..=5")]
    InvalidSeverity(u8),
    #[error("{kind}: {msg}")]
    InvalidParameter { kind: &'static str, msg: String },
    #[error("{kind}: image of {height}x{width} is smaller than {min}x{min}")]
    ImageTooSmall {
        kind: &'static str,
        height: usize,
        width: usize,
        min: usize,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("severity manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = CorruptError> = std::result::Result<T, E>;

pub(crate) fn invalid(kind: &'static str, msg: impl Into<String>) -> CorruptError {
    CorruptError::InvalidParameter {
        kind,
        msg: msg.into(),
    }
}
