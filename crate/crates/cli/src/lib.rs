//! Command implementations behind the `blocktri` binary.

pub mod commands;
pub mod config;

use std::fmt;

use blocktri::Error;

/// Failure with an exit category.
#[derive(Debug)]
pub enum CliError {
    Numerical(String),
    Io(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Numerical(m) | CliError::Io(m) | CliError::Config(m) => m,
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category(), "message": self.message() }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.category(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Format(_) => CliError::Io(msg),
            Error::InvalidParameter(_) | Error::BandTooWide { .. } | Error::InvalidRankCount { .. } => {
                CliError::Config(msg)
            }
            _ => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
