use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs} {lhs_dims:?} and {rhs} {rhs_dims:?}")]
    Shape {
        op: &'static str,
        lhs: String,
        lhs_dims: Vec<usize>,
        rhs: String,
        rhs_dims: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("loss must be scalar, got dims {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("loss builder is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid score: {0}")]
    InvalidScore(String),

    #[error("score parse error at line {line}: {msg}")]
    ScoreParse { line: usize, msg: String },

    #[error("alignment collapsed at decoder step {step}: all forward variables are zero")]
    AlignmentCollapse { step: usize },

    #[error("corpus generation failed: {0}")]
    Corpus(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
