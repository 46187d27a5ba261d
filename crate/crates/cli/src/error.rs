use std::path::Path;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Core(#[from] beta_evidence::Error),
}

/// The single line printed on stderr when a command fails.
#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        use beta_evidence::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::Parse { .. } | E::MissingColumn(_) | E::Csv(_) => "data",
                E::Diverged { .. } => "diverged",
                E::Io(_) => "io",
                E::Json(_) | E::Version(_) => "checkpoint",
                _ => "invalid",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    /// JSON object on one line: `{"error": kind, "field"?: ..., "message": ...}`.
    pub fn to_line(&self) -> String {
        let field = match self {
            CliError::Config { field, .. } => Some(field.as_str()),
            _ => None,
        };
        let line = ErrorLine {
            error: self.kind(),
            field,
            message: self.to_string().split_whitespace().collect::<Vec<_>>().join(" "),
        };
        serde_json::to_string(&line).expect("error line serializes")
    }
}
