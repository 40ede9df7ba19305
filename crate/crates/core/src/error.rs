use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// An input value is outside its documented range.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A factorization or iteration broke down.
    #[error("numerical failure: {message}{}", .rcond.map(|r| format!(" (reciprocal condition estimate {r:.3e})")).unwrap_or_default())]
    Numerical {
        message: String,
        rcond: Option<f64>,
    },

    /// An API was called out of order.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("format error: {0}")]
    Format(String),

    /// A decoder fit failed on one patch of the bagged projection.
    #[error("patch {index} of the {height}x{width} tiling: {source}")]
    Patch {
        height: usize,
        width: usize,
        index: usize,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn numerical(message: impl Into<String>, rcond: Option<f64>) -> Self {
        Error::Numerical {
            message: message.into(),
            rcond,
        }
    }
}
