use serde::Serialize;
use thiserror::Error;

/// Failure classes, each mapped to a fixed process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Config,
    Numeric,
    Io,
    TheoremViolation,
}

impl Class {
    pub fn exit_code(self) -> i32 {
        match self {
            Class::Config => 2,
            Class::Numeric | Class::Io => 3,
            Class::TheoremViolation => 4,
        }
    }
}

#[derive(Debug, Clone, Error, Serialize)]
#[error("{message}")]
pub struct CliError {
    pub class: Class,
    /// Dotted config key the error refers to, when there is one.
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            class: Class::Config,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn numeric(err: ssem_core::Error) -> Self {
        Self {
            class: Class::Numeric,
            field: None,
            message: err.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self {
            class: Class::Io,
            field: None,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
