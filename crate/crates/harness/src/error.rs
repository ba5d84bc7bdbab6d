use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("corpus is invalid:\n{}", .0.join("\n"))]
    Corpus(Vec<String>),
    #[error("length mismatch: {left} decisions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("activity log: {0}")]
    Activity(String),
    #[error(transparent)]
    Engine(#[from] dualtrack_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
