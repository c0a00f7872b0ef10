use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {}: {message}", if key.is_empty() { "file" } else { key.as_str() })]
    Config { key: String, message: String },
    #[error("missing {}: run `{producer}` first", path.display())]
    MissingArtifact {
        path: PathBuf,
        producer: &'static str,
    },
    #[error("{} was written under config hash {found}, current config hashes to {expected}; rerun `{producer}`", path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
        producer: &'static str,
    },
    #[error(transparent)]
    Core(#[from] metatrend::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::HashMismatch { .. } => "hash_mismatch",
            CliError::Core(_) => "pipeline",
            CliError::Other(_) => "other",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> serde_json::Value {
        let mut rec = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { key, .. } => rec["key"] = json!(key),
            CliError::MissingArtifact { path, producer }
            | CliError::HashMismatch { path, producer, .. } => {
                rec["path"] = json!(path);
                rec["producer"] = json!(producer);
            }
            _ => {}
        }
        rec
    }
}

pub type CliResult<T> = Result<T, CliError>;
