use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MadtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MadtError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// A softmax row or decision point where every entry is masked out.
    #[error("no legal entry: {0}")]
    NoLegal(String),

    #[error("data integrity: {0}")]
    DataIntegrity(String),

    #[error("unification failed for scenario `{scenario}`: {reason}")]
    Unification { scenario: String, reason: String },

    #[error("unknown scenario `{id}`; registered: {registered:?}")]
    UnknownScenario { id: String, registered: Vec<String> },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl MadtError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MadtError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        MadtError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MadtError::Config { .. } | MadtError::UnknownScenario { .. } => 2,
            MadtError::DataIntegrity(_)
            | MadtError::Unification { .. }
            | MadtError::Format { .. }
            | MadtError::Io { .. } => 3,
            MadtError::Numerical(_) => 4,
            MadtError::Dimension { .. } | MadtError::Contract(_) | MadtError::NoLegal(_) => 1,
        }
    }
}
