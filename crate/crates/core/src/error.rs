use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DivError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DivError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: invalid field `{field}`: {message}")]
    InvalidField {
        line: usize,
        field: &'static str,
        message: String,
    },

    /// Input that violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty set: no n-gram of any configured order")]
    EmptySet,

    #[error("no tokens")]
    NoTokens,

    #[error("reduction needs >=2 responses, got {0}")]
    ReductionTooSmall(usize),

    #[error("no pair ratings for set {0:?}")]
    NoPairRatings(String),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("plugin error{}: {message}", id.as_deref().map(|i| format!(" (request {i})")).unwrap_or_default())]
    Plugin {
        id: Option<String>,
        message: String,
    },

    #[error("plugin timed out waiting for request {id}")]
    PluginTimeout { id: String },
}

impl DivError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DivError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn plugin(id: Option<&str>, message: impl Into<String>) -> Self {
        DivError::Plugin {
            id: id.map(str::to_owned),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input or data (as opposed to a
    /// runtime failure such as IO or a crashed plugin).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            DivError::Io { .. } | DivError::Plugin { .. } | DivError::PluginTimeout { .. }
        )
    }
}
