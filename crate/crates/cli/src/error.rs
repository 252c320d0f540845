//! Command-line error type with a machine-readable JSON rendering.

use std::fmt;

use abstention_core::net::NetError;
use abstention_core::synthdata::DataError;
use abstention_core::trainer::TrainError;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn exists(path: &std::path::Path) -> Self {
        Self::new(
            "already_exists",
            format!("{} exists; pass --force to overwrite", path.display()),
        )
    }

    /// One-line JSON for scripts: `{"error":{"kind":...,"message":...}}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::new("data", e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let kind = match &e {
            TrainError::SetpointUnreachable { .. } => "setpoint_unreachable",
            TrainError::Diverged { .. } => "diverged",
            TrainError::InvalidConfig { .. } => "config",
            _ => "train",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        Self::new("net", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("serialization", e.to_string())
    }
}
