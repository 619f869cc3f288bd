use std::path::PathBuf;

/// Errors raised by the propagation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON at line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("entity index out of range at line {line}")]
    EntityOutOfRange { line: usize },

    #[error("relation references missing entity at line {line}")]
    MissingEntity { line: usize },

    #[error("relation with head == tail at line {line}")]
    SelfRelation { line: usize },

    #[error("duplicate sentence id {id:?} at line {line}")]
    DuplicateSentence { id: String, line: usize },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("sentence {0} missing from embedding file")]
    MissingEmbedding(String),

    #[error("token-count mismatch {id}: {found} vs {expected}")]
    TokenCount {
        id: String,
        found: usize,
        expected: usize,
    },

    #[error("graph needs at least two nodes")]
    TooFewNodes,

    #[error("non-finite feature value at node {node}")]
    NonFinite { node: usize },

    #[error("node {node} has zero degree")]
    IsolatedNode { node: usize },

    #[error("no labeled seed nodes")]
    NoSeeds,

    #[error("dense solve limited to {limit} nodes, got {nodes}; use iterative mode")]
    DenseLimit { nodes: usize, limit: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("trace too short: {0} points, need at least 5")]
    TraceTooShort(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the file system rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
