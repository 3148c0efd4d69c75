use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("resource refusal: {0}")]
    Resource(String),
    #[error("numerical tolerance breach: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("simulation failed: {0}")]
    Internal(String),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Resource(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Classifies an engine error raised while a simulation was running.
    pub(crate) fn from_run(context: &str, e: kerrcat::Error) -> Self {
        use kerrcat::Error as E;
        match e {
            E::StepUnderflow { .. } | E::PositivityViolation { .. } | E::NotOrthonormal(_) => {
                CliError::Numerical(format!("{context}: {e}"))
            }
            E::InvalidParameter { .. } => CliError::Config(format!("{context}: {e}")),
            _ => CliError::Internal(format!("{context}: {e}")),
        }
    }

    /// Engine error raised while resolving the config (always a config problem).
    pub(crate) fn from_resolve(context: &str, e: kerrcat::Error) -> Self {
        CliError::Config(format!("{context}: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
