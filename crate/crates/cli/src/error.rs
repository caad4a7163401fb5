use std::path::PathBuf;

use conet_core::agent::{AgentError, ConfigError};
use conet_core::identity::{IdentityError, RegistryError};
use conet_core::negotiation::TranscriptError;
use conet_core::CanonicalError;
use serde_json::{json, Value as Json};
use thiserror::Error;

/// Exit status for a check that ran and found a problem.
pub const EXIT_FAILED: i32 = 1;
/// Exit status for an error that kept the command from running.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Document(#[from] CanonicalError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("{0}")]
    Network(String),
    #[error("timed out: {0}")]
    Timeout(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Io { .. } => "Io",
            CliError::Config(_) => "Config",
            CliError::Agent(_) => "Agent",
            CliError::Identity(_) => "Identity",
            CliError::Registry(_) => "Registry",
            CliError::Document(_) => "Document",
            CliError::Transcript(_) => "Transcript",
            CliError::Network(_) => "Network",
            CliError::Timeout(_) => "Timeout",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Transcript(_) => EXIT_FAILED,
            _ => EXIT_ERROR,
        }
    }

    pub fn to_json(&self) -> Json {
        let mut v = json!({ "error": self.code(), "message": self.to_string() });
        if let CliError::Transcript(e) = self {
            v["index"] = json!(e.index);
        }
        v
    }
}
