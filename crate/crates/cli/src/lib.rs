//! Library side of the `decssl` command-line tool: config parsing, the
//! experiment runner, sweeps and the data and verification commands.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod models;
pub mod sweep;

use std::fmt;
use std::process::ExitCode;

/// Why a command stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad config, bad arguments or unreadable input. Exit code 1.
    Config(anyhow::Error),
    /// Any other runtime error. Exit code 1.
    Runtime(anyhow::Error),
    /// Training produced non-finite values. Exit code 2.
    Diverged(anyhow::Error),
    /// A verification command ran to completion and its check failed.
    /// Exit code 3.
    Verdict(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Config(_) | Failure::Runtime(_) => 1,
            Failure::Diverged(_) => 2,
            Failure::Verdict(_) => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
            Failure::Diverged(e) => write!(f, "diverged: {e:#}"),
            Failure::Verdict(s) => write!(f, "verification failed: {s}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;
