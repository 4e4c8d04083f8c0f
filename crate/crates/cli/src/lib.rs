//! Library side of the `itemlab` command-line tool.
//!
//! Every subcommand is a plain function here so tests can drive it without
//! spawning a process. Exit codes: 0 success, 1 configuration or input
//! error, 2 runtime failure.

pub mod commands;
pub mod error;
pub mod json;
pub mod manifest;

pub use error::{CliError, ErrorKind};

/// Parses `ITEM_LOG_LEVEL`; unset means `info`.
pub fn log_level(value: Option<&str>) -> Result<log::LevelFilter, CliError> {
    match value {
        None => Ok(log::LevelFilter::Info),
        Some("error") => Ok(log::LevelFilter::Error),
        Some("info") => Ok(log::LevelFilter::Info),
        Some("debug") => Ok(log::LevelFilter::Debug),
        Some(other) => Err(CliError::config(format!(
            "invalid ITEM_LOG_LEVEL: `{other}` (expected error, info or debug)"
        ))),
    }
}
