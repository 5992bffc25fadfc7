use std::io;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Format(_) | CliError::Io { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<evprune_core::Error> for CliError {
    fn from(e: evprune_core::Error) -> Self {
        use evprune_core::Error as E;
        match e {
            E::Validation(_) | E::Shape(_) => CliError::Validation(e.to_string()),
            E::Parse { .. } | E::Format(_) => CliError::Format(e.to_string()),
            E::Io(source) => CliError::Io {
                path: "<unknown>".into(),
                source,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
