use thiserror::Error;

use crate::ids::{EventId, SessionId, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("session not found: {0}")]
    SessionNotFound(SessionId),

    #[error("session {0} is closed")]
    SessionClosed(SessionId),

    #[error("invalid transcript entry: {0}")]
    InvalidEntry(String),

    #[error("event {0} already integrated")]
    DuplicateEvent(EventId),

    #[error("invalid turn: {0}")]
    InvalidTurn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema violation at byte {offset}: {message}")]
    SchemaViolation { offset: usize, message: String },

    #[error("dispatch error: {0}")]
    Dispatch(String),

    #[error("plan validation failed: {0}")]
    PlanValidation(String),

    #[error("tool registration failed: {0}")]
    Registration(String),

    #[error("event rejected for task {task}: {reason}")]
    EventRejected { task: TaskId, reason: String },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("episode error: {0}")]
    Episode(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
