use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward root must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("variable {0} is not a traced leaf")]
    NotALeaf(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),

    #[error("parameters are frozen: {0}")]
    Frozen(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing loss component `{0}`")]
    MissingComponent(&'static str),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
