use std::path::PathBuf;

/// Errors produced anywhere in the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller supplied a parameter outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two arrays, secrets or configurations disagree in size.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The codebook could not meet its distance target.
    #[error("codebook infeasible: {0}")]
    Infeasible(String),

    /// A loss or activation became NaN/Inf.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A file did not follow the expected layout.
    #[error("malformed {what} at {}: {detail}", path.display())]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            detail: detail.into(),
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        if !($cond) {
            return Err($crate::error::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
