use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("label hierarchy violated at rows {rows:?}: a subcategory is set without `misogynous`")]
    HierarchyViolation { rows: Vec<usize> },

    #[error("failed to decode image for sample `{id}`: {message}")]
    Decode { id: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("alignment error: first offending id `{id}`: {message}")]
    Alignment { id: String, message: String },

    #[error("unknown encoder id `{0}`")]
    UnknownEncoder(String),

    #[error("model construction error: {0}")]
    Construction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn argument(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    /// Process exit code for the command-line runner.
    ///
    /// 2 = configuration, 3 = data, 4 = alignment.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Argument(_)
            | Error::UnknownEncoder(_)
            | Error::Construction(_)
            | Error::Checkpoint(_) => 2,
            Error::Alignment { .. } => 4,
            Error::MissingColumn { .. }
            | Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::HierarchyViolation { .. }
            | Error::Decode { .. }
            | Error::Io { .. }
            | Error::Json(_) => 3,
            Error::Internal(_) => 1,
        }
    }
}
