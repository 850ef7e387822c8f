use std::fmt::Display;

use thiserror::Error;

/// Failures mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("verdict failed: {0}")]
    Verdict(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Verdict(_) => 3,
        }
    }
}

pub fn config_err(e: impl Display) -> Failure {
    Failure::Config(e.to_string())
}

impl From<causal_sde::Error> for Failure {
    fn from(e: causal_sde::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}
