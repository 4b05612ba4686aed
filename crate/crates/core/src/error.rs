use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("column `{column}`: unseen category {value:?}")]
    UnseenCategory { column: String, value: String },

    #[error("missing attributes for {kind} id {id:?}")]
    MissingAttributes { kind: &'static str, id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("attacker partition cannot cover items {0:?}")]
    Coverage(Vec<usize>),

    #[error("training diverged at epoch {epoch} (loss {loss}); use a smaller learning_rate")]
    Divergence { epoch: usize, loss: f64 },

    #[error("requested {requested} items but only {available} are available")]
    NotEnoughItems { requested: usize, available: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("scores need both classes present (positives: {positives}, negatives: {negatives})")]
    OneClass { positives: usize, negatives: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("missing or stale artifact {path}; run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
