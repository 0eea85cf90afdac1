use std::path::Path;

use gaplab_core::Error as CoreError;

/// Exit code for malformed input, bad flags or an invalid config.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for a numerical failure during computation.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    /// Errors raised while computing on already validated input.
    pub fn from_run(err: CoreError) -> Self {
        match err {
            CoreError::NonFinite(_) | CoreError::NonFiniteLoss { .. } | CoreError::Degenerate(_) => {
                CliError::Numerical(err.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }

    /// Errors raised while checking input.
    pub fn from_input(err: CoreError) -> Self {
        CliError::Input(err.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
