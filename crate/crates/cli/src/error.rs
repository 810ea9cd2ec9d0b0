use std::path::PathBuf;

use thiserror::Error;

/// Process exit code for a malformed or inadmissible configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for a numerical failure during a run.
pub const EXIT_NUMERICAL: i32 = 3;
/// Process exit code for I/O and missing-artifact failures.
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, Error)]
pub enum LabError {
    /// `path` is the dotted config key the rule applies to.
    #[error("config invalid at `{path}`: {reason}")]
    ConfigInvalid { path: String, reason: String },
    #[error("unknown catalog entry `{0}`")]
    UnknownExperiment(String),
    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("no overlapping observables: {0}")]
    NoOverlap(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl LabError {
    pub fn config(path: impl Into<String>, reason: impl ToString) -> Self {
        LabError::ConfigInvalid { path: path.into(), reason: reason.to_string() }
    }

    pub fn numerical(context: impl Into<String>, err: impl ToString) -> Self {
        LabError::Numerical { context: context.into(), message: err.to_string() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ConfigInvalid { .. } | LabError::UnknownExperiment(_) => EXIT_CONFIG,
            LabError::Numerical { .. } => EXIT_NUMERICAL,
            LabError::MissingData(_) | LabError::NoOverlap(_) | LabError::Io { .. } => EXIT_OTHER,
        }
    }
}
