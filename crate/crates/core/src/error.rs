use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("trace {trace} has {len} frames but the window needs more than {window}")]
    TraceTooShort {
        trace: usize,
        len: usize,
        window: usize,
    },

    #[error("frame index {index} out of range (valid {min}..{max})")]
    IndexOutOfRange { index: usize, min: usize, max: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("no episode in progress; call reset first")]
    NotReset,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
