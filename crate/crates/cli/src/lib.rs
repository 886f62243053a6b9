//! Front end for the trimlstat experiments: configuration, command runners
//! and run manifests. The `trimlstat` binary is a thin clap wrapper.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] trimlstat::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for anything the user can fix in the configuration, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                trimlstat::Error::Config(_) | trimlstat::Error::Domain(_) | trimlstat::Error::Capability(_) => 2,
                trimlstat::Error::Numeric(_) | trimlstat::Error::Assumption(_) => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}

pub use commands::{execute, Command, Options, Outcome};
