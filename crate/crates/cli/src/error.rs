use std::fmt;
use std::path::Path;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input,
    Numeric,
    Io,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Input => 2,
            Kind::Numeric => 3,
            Kind::Io => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { kind: Kind::Input, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, message: message.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { kind: Kind::Io, message: format!("{}: {err}", path.display()) }
    }

    /// Serialization of our own types; treated as bad input.
    pub(crate) fn internal(err: impl fmt::Display) -> Self {
        Self::input(err.to_string())
    }

    /// Adds context, keeping the kind.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { kind: self.kind, message: format!("{what}: {}", self.message) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fovx_core::Error> for CliError {
    fn from(e: fovx_core::Error) -> Self {
        let kind = if e.is_io() {
            Kind::Io
        } else if e.is_numeric() {
            Kind::Numeric
        } else {
            Kind::Input
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        let kind = if e.is_io_error() { Kind::Io } else { Kind::Input };
        Self { kind, message: e.to_string() }
    }
}
