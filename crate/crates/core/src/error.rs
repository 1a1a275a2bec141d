use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("corpus is empty after filtering users with fewer than {min_len} interactions")]
    EmptyCorpus { min_len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("backend reply could not be parsed after {attempts} attempt(s): {reason}; raw reply: {raw:?}")]
    ReplyParse { attempts: usize, reason: String, raw: String },

    #[error("operation contract violated for {kind}: {reason}")]
    OperationContract { kind: String, reason: String },

    #[error("user {user_id}, stage {stage}: {source}")]
    Stage {
        user_id: u32,
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),

    #[error("user {0} not found")]
    UserNotFound(u32),

    #[error("item {item} out of range (catalog size {n_items})")]
    ItemOutOfRange { item: u32, n_items: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("teacher mediator undefined for user {0}: no neighbors")]
    MediatorUndefined(u32),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("missing upstream output {path}: run `{command}` first (or pass --auto)")]
    Dependency { command: &'static str, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    /// Process exit code for the error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::EmptyCorpus { .. } | Error::Io { .. } => 3,
            Error::Dependency { .. } => 4,
            Error::Transport(_) | Error::ReplyParse { .. } => 5,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Divergence { .. } => 7,
            _ => 6,
        }
    }
}
