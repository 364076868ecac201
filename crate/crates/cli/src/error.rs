use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 usage, 3 data or validation, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<leakage_audit::Error> for CliError {
    fn from(e: leakage_audit::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
