use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("edge #{index} ({source_id} -> {target_id}): {reason}")]
    Ingestion { index: usize, source_id: String, target_id: String, reason: String },

    #[error("the graph has no edges; a model needs at least one")]
    EmptyGraph,

    #[error("invalid merge: {0}")]
    InvalidMerge(String),

    #[error("inconsistent model: {0}")]
    InconsistentModel(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("no structure: the model costs as much as the null model, so coarsening is vacuous")]
    NoStructure,

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
