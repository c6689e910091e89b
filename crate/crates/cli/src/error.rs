use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("missing artifact {}: {hint}", .path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for problems with the configuration, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation(_) => 1,
            CliError::MissingArtifact { .. } | CliError::Runtime(_) => 2,
        }
    }
}

pub fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}
