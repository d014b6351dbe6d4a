//! File formats, checkpoints and the command-line pipeline around the
//! core model crate.
//!
//! Everything stateful flows through three binary formats: GVMT (one
//! tensor), GVMD (a paired dataset container) and GVMC (a checkpoint:
//! text manifest plus GVMT blocks). Commands are deterministic: the same
//! flags and seed always reproduce identical output bytes.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod gvmt;
pub mod runconfig;
pub mod wav;

use std::fmt;

/// Command-level errors. `Usage` maps to exit code 2, everything else
/// to exit code 1.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; the message names the offender.
    Usage(String),
    /// A check or assertion failed (gradient check over tolerance,
    /// training target missed, corrupt input file).
    Check(String),
    /// Malformed binary input, with the byte offset of the problem.
    Format { offset: u64, message: String },
    Io(std::io::Error),
    Core(gvm_core::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Check(m) => write!(f, "{m}"),
            CliError::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<gvm_core::Error> for CliError {
    fn from(e: gvm_core::Error) -> Self {
        match e {
            gvm_core::Error::InvalidConfig { message } => CliError::Usage(message),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError::Usage(m.into())
    }

    pub fn check(m: impl Into<String>) -> Self {
        CliError::Check(m.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
