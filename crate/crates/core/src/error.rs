use thiserror::Error;

/// Errors surfaced by the quality-assessment pipeline.
#[derive(Debug, Error)]
pub enum QaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("database `{0}` is not registered")]
    UnknownDatabase(String),

    #[error("database `{0}` is already registered")]
    DuplicateDatabase(String),

    #[error("duplicate sample id `{id}` in database `{database}`")]
    DuplicateSample { database: String, id: String },

    #[error("sample `{id}`: MOS {mos} outside declared range [{lo}, {hi}]")]
    MosOutOfRange {
        id: String,
        mos: f64,
        lo: f64,
        hi: f64,
    },

    #[error("sample `{id}`: media file `{path}` not found")]
    MissingMedia { id: String, path: String },

    #[error("database `{name}` too small: {n} samples (minimum {min})")]
    DatabaseTooSmall { name: String, n: usize, min: usize },

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint config hash mismatch: expected {expected}, found {found}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("held-out database `{0}` overlaps the training set")]
    CrossEvalOverlap(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QaError>;
