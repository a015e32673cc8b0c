use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("scenario is not valid JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numerical failure: {0}")]
    Numerical(#[source] smpc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Field { .. } | CliError::Argument(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<smpc_core::Error> for CliError {
    fn from(e: smpc_core::Error) -> Self {
        CliError::Numerical(e)
    }
}
