use std::path::Path;

use thiserror::Error;

/// Process exit status for configuration and input problems.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit status for estimation failures.
pub const EXIT_FIT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] vinerisk_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use vinerisk_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Core(E::Config(_) | E::InvalidInput(_)) => EXIT_CONFIG,
            CliError::Core(_) => EXIT_FIT,
        }
    }
}
