use thiserror::Error;

/// Errors raised by the library.
///
/// The variants map one-to-one onto the command-line exit codes: domain and
/// data problems are the caller's fault, numerical failures are ours.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An iterative solver failed to converge or produced a non-finite value.
    #[error("numerical error: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    /// The square-root loss hit an exactly zero residual; its gradient is undefined.
    #[error("perfect fit: zero residual, gradient of the square-root loss is undefined")]
    PerfectFit,

    /// Input data could not be used (unreadable, non-numeric, missing target, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(message: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            message: message.into(),
            residual,
        }
    }
}
