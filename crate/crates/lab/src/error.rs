use thiserror::Error;

/// Failures of the harness, each mapped to a fixed process exit code.
#[derive(Debug, Error)]
pub enum LabError {
    /// Malformed or invalid input, reported with a location or field path. Exit 2.
    #[error("invalid input: {0}")]
    Input(String),
    /// A numerical precondition failed during a run. Exit 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The system fails ping-pong validation. Exit 4.
    #[error("validation failed: {0}")]
    Validation(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 2,
            Self::Numerical(_) => 3,
            Self::Validation(_) => 4,
        }
    }

    pub fn input(field: &str, msg: impl std::fmt::Display) -> Self {
        Self::Input(format!("{field}: {msg}"))
    }

    pub fn numerical(context: &str, err: impl std::fmt::Display) -> Self {
        Self::Numerical(format!("{context}: {err}"))
    }
}

/// Position-bearing message for a JSON parse failure.
pub fn json_error(what: &str, e: &serde_json::Error) -> LabError {
    LabError::Input(format!("{what}: {e} (line {}, column {})", e.line(), e.column()))
}
