use std::fmt;

use mosaic_core::Error;

/// Failure of a CLI run, classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration, unreadable inputs,
    /// unwritable output directory.
    Config(String),
    /// A library contract failed while the experiment ran.
    Contract(String),
    /// Training diverged.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Contract(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn contract(msg: impl fmt::Display) -> Self {
        CliError::Contract(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Contract(m) => write!(f, "contract violation: {m}"),
            CliError::Divergence(m) => write!(f, "divergence: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// The message of a library error without its category prefix.
pub fn detail(e: &Error) -> String {
    match e {
        Error::Divergence { iteration, detail } => format!("at iteration {iteration}: {detail}"),
        Error::Parse(m) | Error::Contract(m) | Error::Exhausted(m) => m.clone(),
        Error::Io(e) => e.to_string(),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => CliError::Divergence(detail(&e)),
            Error::Parse(m) => CliError::Config(m),
            Error::Contract(m) | Error::Exhausted(m) => CliError::Contract(m),
            Error::Io(e) => CliError::Contract(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
