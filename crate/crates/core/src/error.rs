use thiserror::Error;

/// Errors produced by the compression pipeline and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("symbol {0} is not in the code table")]
    UnknownSymbol(u64),

    #[error("bit stream exhausted mid-codeword at bit offset {bit_offset}")]
    StreamExhausted { bit_offset: u64 },

    #[error("invalid code at bit offset {bit_offset}")]
    InvalidCode { bit_offset: u64 },

    #[error("invalid code lengths: {0}")]
    InvalidCodeLengths(String),

    #[error("bad magic at byte offset {offset}: expected {expected:?}")]
    BadMagic { offset: usize, expected: &'static str },

    #[error("unsupported version {version} at byte offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },

    #[error("truncated input at byte offset {offset}: {what}")]
    Truncated { offset: usize, what: &'static str },

    #[error("malformed payload at byte offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("inconsistent layer {layer:?}: {reason}")]
    Inconsistent { layer: String, reason: String },
}

impl Error {
    /// Byte offset into a serialized buffer, when the error carries one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            Error::BadMagic { offset, .. }
            | Error::UnsupportedVersion { offset, .. }
            | Error::Truncated { offset, .. }
            | Error::Malformed { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
