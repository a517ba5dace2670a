use std::fmt;

use crate::error::Error;

/// Failure of a scenario run, classified for the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Io { path: String, message: String },
    Parse { line: usize, column: usize, message: String },
    UnknownField(String),
    Validation(Error),
    /// A solver, simulator or learner error, tagged with the pipeline stage.
    Compute { stage: &'static str, source: Error },
}

impl RunError {
    pub(crate) fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> RunError {
        move |source| RunError::Compute { stage, source }
    }

    /// Process exit code. Each error class has its own code; see the README table.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => 10,
            Self::Parse { .. } => 11,
            Self::UnknownField(_) => 12,
            Self::Validation(_) => 13,
            Self::Compute { source, .. } => match source {
                Error::NotConverged { .. } | Error::MaxIterationsExceeded { .. } => 20,
                Error::SingularMatrix(_) => 21,
                Error::RankDeficient { .. } | Error::TooFewSamples { .. } => 22,
                Error::UnstableClosedLoop(_) => 23,
                Error::IncentiveInfeasible { .. } => 24,
                _ => 13,
            },
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, message } => write!(f, "i/o error on {path}: {message}"),
            Self::Parse { line, column, message } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            Self::UnknownField(path) => write!(f, "unknown field `{path}`"),
            Self::Validation(e) => write!(f, "invalid scenario: {e}"),
            Self::Compute { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

impl std::error::Error for RunError {}
