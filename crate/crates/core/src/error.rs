use thiserror::Error;

/// Error kinds shared by every module. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operand outside the domain of a function (log of zero, non-positive variance, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The caller asked for something the operation does not support.
    #[error("usage error: {0}")]
    Usage(String),
    /// Malformed bytes in a file.
    #[error("format error: {0}")]
    Format(String),
    /// Training or fitting produced non-finite numbers.
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// The message without the kind prefix.
    pub fn message(&self) -> String {
        match self {
            Error::Config(m)
            | Error::Domain(m)
            | Error::Usage(m)
            | Error::Format(m)
            | Error::Numerical(m) => m.clone(),
            Error::Io(e) => e.to_string(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
