//! Error type shared by the whole engine.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by tensor operations, model construction and training.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two operands cannot be combined; both shapes are named.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A tensor constructor received inconsistent shape/data.
    BadShape { expected: usize, got: usize },
    /// An index (token id, target class, row) is out of range.
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// An attention mask left a query row with nothing to attend to.
    FullyMaskedRow { row: usize },
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: &'static str },
    /// `Tape::backward` was called a second time without a reset.
    BackwardConsumed,
    /// Backward was requested on a value that is not a scalar.
    NotScalar { rows: usize, cols: usize },
    /// A parameter name was registered twice.
    DuplicateParam { name: String },
    /// A named parameter does not exist.
    UnknownParam { name: String },
    /// A configuration value is invalid; the message names the field.
    InvalidConfig { message: String },
    /// A contrastive batch needs at least two pairs.
    DegenerateBatch { size: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::BadShape { expected, got } => {
                write!(f, "shape/data mismatch: shape wants {expected} values, got {got}")
            }
            Error::IndexOutOfRange { what, index, bound } => {
                write!(f, "{what} {index} out of range (bound {bound})")
            }
            Error::FullyMaskedRow { row } => {
                write!(f, "attention row {row} is fully masked")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::BackwardConsumed => {
                write!(f, "backward already ran on this tape; build a fresh tape")
            }
            Error::NotScalar { rows, cols } => {
                write!(f, "backward needs a scalar loss, got {rows}x{cols}")
            }
            Error::DuplicateParam { name } => write!(f, "duplicate parameter name '{name}'"),
            Error::UnknownParam { name } => write!(f, "unknown parameter '{name}'"),
            Error::InvalidConfig { message } => write!(f, "invalid config: {message}"),
            Error::DegenerateBatch { size } => {
                write!(f, "contrastive batch needs at least 2 pairs, got {size}")
            }
        }
    }
}

#[cfg(any(test, feature = "std"))]
impl std::error::Error for Error {}

impl Error {
    pub fn invalid_config(message: impl Into<String>) -> Self {
        Error::InvalidConfig { message: message.into() }
    }
}
