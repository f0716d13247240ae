use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("record {record}: {message}")]
    Record { record: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("trial {trial}: unknown utterance id `{id}`")]
    UnresolvedId { trial: usize, id: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector{}", .0.as_deref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    ZeroNorm(Option<String>),

    #[error("degenerate cohort statistics for `{id}` (std = {std})")]
    DegenerateCohort { id: String, std: f64 },

    #[error("zero variance in score column {0}")]
    ZeroVariance(usize),

    #[error("only one class present in labels")]
    SingleClass,

    #[error("optimizer did not converge in {iters} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iters: usize, grad_norm: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
