use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The regularized Gram system could not be factorized.
    #[error("solver failure{}: system of order {order} is numerically singular (condition estimate {condition:.3e})", iteration_suffix(*.iteration))]
    SolverFailure {
        order: usize,
        condition: f64,
        iteration: Option<usize>,
    },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// Malformed input file; `line` is 1-based and counts the header.
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn iteration_suffix(iteration: Option<usize>) -> String {
    match iteration {
        Some(t) => format!(" at outer iteration {t}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attaches the outer-iteration number to a solver failure.
    pub fn at_iteration(self, t: usize) -> Self {
        match self {
            Error::SolverFailure {
                order, condition, ..
            } => Error::SolverFailure {
                order,
                condition,
                iteration: Some(t),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
