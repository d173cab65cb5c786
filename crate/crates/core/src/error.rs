use std::path::PathBuf;

use crate::corpus::CodeFamily;
use crate::searchdsl::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("need at least 3 valid patents to split, got {0}")]
    TooFewValid(usize),
    #[error("code statistics family mismatch: {valid:?} vs {corpus:?}")]
    FamilyMismatch { valid: CodeFamily, corpus: CodeFamily },
    #[error("negative candidate pool holds {pool} records but {requested} were requested")]
    InsufficientPool { pool: usize, requested: usize },
    #[error("record id `{0}` appears in more than one input set")]
    IdCollision(String),
    #[error(transparent)]
    Query(#[from] ParseError),
    #[error("node `{0}` is not in the graph")]
    UnknownNode(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,
    #[error("metric needs at least one positive label")]
    NoPositives,
    #[error("length mismatch: {left} scores vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("training data must contain both classes")]
    SingleClass,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad file format at line {line}: {reason}")]
    Format { line: usize, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
