use std::fmt;
use std::path::Path;

use catbev_core::ErrorKind;

/// A command failure, classified by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Prefixes the message with a file path, keeping the classification.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{p}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<catbev_core::Error> for CliError {
    fn from(e: catbev_core::Error) -> Self {
        let msg = e.to_string();
        match e.kind() {
            ErrorKind::Config => CliError::Config(msg),
            ErrorKind::Data => CliError::Data(msg),
            ErrorKind::Numeric => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
