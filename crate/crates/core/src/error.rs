use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Every variant maps onto one of the CLI exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration, schedule, or prior settings.
    #[error("config: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("validation: {message}{}", location(.row, .column))]
    Validation {
        message: String,
        row: Option<usize>,
        column: Option<String>,
    },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain: {0}")]
    Domain(String),

    /// Factorization or other numerical failure.
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(row: &Option<usize>, column: &Option<String>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" (row {r}, column '{c}')"),
        (Some(r), None) => format!(" (row {r})"),
        (None, Some(c)) => format!(" (column '{c}')"),
        (None, None) => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            row: None,
            column: None,
        }
    }

    pub fn at(message: impl Into<String>, row: usize, column: impl Into<String>) -> Self {
        Error::Validation {
            message: message.into(),
            row: Some(row),
            column: Some(column.into()),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        Self::io(path, std::io::Error::other(e))
    }

    /// Process exit status: 2 config, 3 data validation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Validation { .. } | Error::Domain(_) | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }

    /// Short machine-readable tag for single-line error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Validation { .. } => "E_VALIDATION",
            Error::Domain(_) => "E_DOMAIN",
            Error::Io { .. } => "E_IO",
            Error::Numerical(_) => "E_NUMERICAL",
        }
    }
}
