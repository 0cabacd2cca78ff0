use std::path::PathBuf;

use conceptmark_core::Error as CoreError;

/// Command failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flag, unknown config key or out-of-domain setting.
    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {}: run `{producer}` first", path.display())]
    MissingInput { path: PathBuf, producer: &'static str },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 config, 3 I/O, 4 numeric failure, 5 dimension mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::Infeasible(_) => 2,
                CoreError::Io { .. } | CoreError::Format { .. } => 3,
                CoreError::NonFinite(_) => 4,
                CoreError::ShapeMismatch(_) => 5,
            },
        }
    }
}
