use std::path::PathBuf;

/// Failure of a CLI command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments, or input files. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A numerical routine failed. Exit code 1.
    #[error(transparent)]
    Core(gapkit_core::Error),
    /// Every replicate of an experiment failed. Exit code 3.
    #[error("all {0} replicates failed")]
    AllFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(gapkit_core::Error::InvalidParameter(_)) => 2,
            CliError::Core(_) => 1,
            CliError::AllFailed(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<gapkit_core::Error> for CliError {
    fn from(e: gapkit_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub type CliResult<T> = Result<T, CliError>;
