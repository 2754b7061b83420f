use std::fmt::Display;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Config,
    MissingInput,
    OutputExists,
    InvalidInput,
    Io,
    Training,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Config => 3,
            ErrorKind::MissingInput => 4,
            ErrorKind::OutputExists => 5,
            ErrorKind::InvalidInput => 6,
            ErrorKind::Io => 7,
            ErrorKind::Training => 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{kind:?}: {message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// One-line JSON object for stderr, e.g.
    /// `{"error":"config","exit_code":3,"message":"..."}`.
    pub fn to_line(&self) -> String {
        serde_json::json!({
            "error": self.kind,
            "exit_code": self.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, e.to_string())
    }
}

/// Attach a kind and a short description to any displayable error.
pub trait Context<T> {
    fn context(self, kind: ErrorKind, what: impl Display) -> Result<T, CliError>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn context(self, kind: ErrorKind, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(kind, format!("{what}: {e}")))
    }
}
