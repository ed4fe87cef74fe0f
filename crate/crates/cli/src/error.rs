use thiserror::Error;

/// Errors raised while decoding or encoding on-disk files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("file too short for a {what} header: {actual} bytes, need {needed}")]
    TruncatedHeader { what: &'static str, actual: usize, needed: usize },
    #[error("magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: [u8; 4] },
    #[error("version: unsupported value {0}")]
    BadVersion(u16),
    #[error("dtype: unknown code {0} (0 = f16, 1 = f32)")]
    BadDtype(u16),
    #[error("{0}: must be at least 1")]
    ZeroField(&'static str),
    #[error("{field}: value {value} does not fit in the header")]
    FieldOverflow { field: &'static str, value: usize },
    #[error("payload length mismatch: header declares {expected} bytes, found {actual}")]
    PayloadLength { expected: u64, actual: u64 },
    #[error("{what} value {index} is not finite")]
    NonFinite { what: &'static str, index: usize },
    #[error("{0} cannot be represented in the file format")]
    Unrepresentable(&'static str),
    #[error(transparent)]
    Core(#[from] fier_core::Error),
}
