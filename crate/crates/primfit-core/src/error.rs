use alloc::string::String;
use core::fmt;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Tensor shapes inconsistent with the requested operation.
    ShapeMismatch { context: String },
    /// A NaN or infinity showed up where finite values are required.
    NonFinite { context: String },
    /// Input is geometrically degenerate for the requested operation.
    Degenerate { context: String },
    /// An empty collection where at least one element is required.
    Empty { context: String },
    /// A value outside its documented range.
    InvalidArgument { context: String },
}

impl CoreError {
    pub(crate) fn shape(context: impl Into<String>) -> Self {
        CoreError::ShapeMismatch {
            context: context.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        CoreError::NonFinite {
            context: context.into(),
        }
    }

    pub(crate) fn degenerate(context: impl Into<String>) -> Self {
        CoreError::Degenerate {
            context: context.into(),
        }
    }

    pub(crate) fn empty(context: impl Into<String>) -> Self {
        CoreError::Empty {
            context: context.into(),
        }
    }

    pub(crate) fn invalid(context: impl Into<String>) -> Self {
        CoreError::InvalidArgument {
            context: context.into(),
        }
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { context } => write!(f, "shape mismatch: {context}"),
            CoreError::NonFinite { context } => write!(f, "non-finite value: {context}"),
            CoreError::Degenerate { context } => write!(f, "degenerate input: {context}"),
            CoreError::Empty { context } => write!(f, "empty input: {context}"),
            CoreError::InvalidArgument { context } => write!(f, "invalid argument: {context}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
