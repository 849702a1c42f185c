use std::fmt;

use serde::Serialize;

/// A failed run: what went wrong and the exit code it maps to.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: u8,
}

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>, exit_code: u8) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
            exit_code,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message, EXIT_CONFIG)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new("input", message, EXIT_INPUT)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()), EXIT_INPUT)
    }

    /// One JSON object on stderr.
    pub fn emit(&self) {
        let body = serde_json::json!({ "error": self });
        eprintln!("{body}");
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl From<spinefuse_core::Error> for CliError {
    fn from(e: spinefuse_core::Error) -> Self {
        let code = match e.kind() {
            "config" => EXIT_CONFIG,
            "data" | "input" | "parse" | "io" | "json" => EXIT_INPUT,
            _ => EXIT_INTERNAL,
        };
        Self::new(e.kind(), e.to_string(), code)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("json", e.to_string(), EXIT_INPUT)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn with_context(mut self, context: &str) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }
}
