use sure_ir_core::Error;
use thiserror::Error as ThisError;

/// Process exit codes.
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, ThisError)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input.
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),

    #[error("{failed} of {total} verification reports failed")]
    Verification { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Verification { .. } => EXIT_VERIFY,
        }
    }

    /// Prefixes the message with the offending file.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        let at = |m: String| format!("{}: {m}", path.display());
        match self {
            CliError::Usage(m) => CliError::Usage(at(m)),
            CliError::Runtime(m) => CliError::Runtime(at(m)),
            other => other,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Malformed { .. } => CliError::Usage(e.to_string()),
            Error::SolverFailure { .. } | Error::OracleFailure(_) | Error::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
