//! Certifier, data-owner, reader and authority workflows, and the
//! export-document demo.

pub mod commands;
pub mod demo;
pub mod deploy;
pub mod reader;
pub mod scenario;

use thiserror::Error;

pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const AUTHZ: i32 = 2;
    pub const LEDGER: i32 = 3;
    pub const DENIED: i32 = 4;
    pub const INTEGRITY: i32 = 5;
    pub const UNREACHABLE: i32 = 6;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Clone, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("not authorized: {0}")]
    Authz(String),
    #[error("ledger rejected the operation: {0}")]
    Ledger(String),
    #[error("access denied: {0}")]
    Denied(String),
    #[error("integrity failure: {0}")]
    Integrity(String),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Authz(_) => exit::AUTHZ,
            CliError::Ledger(_) => exit::LEDGER,
            CliError::Denied(_) => exit::DENIED,
            CliError::Integrity(_) => exit::INTEGRITY,
            CliError::Unreachable(_) => exit::UNREACHABLE,
            CliError::Other(_) => exit::FAILURE,
        }
    }
}
