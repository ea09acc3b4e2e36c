//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

/// Errors produced by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are inconsistent. No broadcasting anywhere: every
    /// mismatch is a hard error.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A tensor axis has zero extent.
    #[error("empty axis: every extent must be positive")]
    EmptyAxis,

    /// An operation received an empty collection.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A value was NaN or infinite where a finite value is required.
    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    /// Memory construction or propagation was attempted with no reference
    /// frames.
    #[error("empty reference set")]
    EmptyReferenceSet,

    /// Weighted aggregation had a zero denominator, so the requested global
    /// token does not exist.
    #[error("global token undefined: no row exceeds the aggregation threshold")]
    GlobalTokenUndefined,

    /// A selected reference frame has neither a conditional kernel nor a
    /// provided mask.
    #[error("missing reference mask for frame {0}")]
    MissingReferenceMask(usize),

    /// Two mask sequences disagree on frame count, frame indices, or
    /// resolution.
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    /// Tensor container file does not start with the "HTRT" magic.
    #[error("bad magic: not an HTRT container")]
    BadMagic,

    /// Tensor container version is unsupported.
    #[error("bad container version {0} (expected 1)")]
    BadVersion(u8),

    /// Tensor container dtype byte is unsupported.
    #[error("unsupported dtype {0} (expected 0 = f32 little-endian)")]
    UnsupportedDtype(u8),

    /// Tensor container payload does not match the declared extents.
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    /// Raster file is not a binary PGM with maxval 255.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Raster header disagrees with the payload.
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    /// Text input (JTable CSV, coordinate lists) failed to parse.
    #[error("malformed input: {0}")]
    Malformed(String),

    /// Configuration value out of its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 2 for I/O and malformed-file errors, 3 for semantic
    /// (shape/frame/content) errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::BadMagic
            | Error::BadVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::TruncatedPayload { .. }
            | Error::UnsupportedFormat(_)
            | Error::HeaderMismatch(_)
            | Error::Malformed(_)
            | Error::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
