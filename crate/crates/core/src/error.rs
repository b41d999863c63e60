use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("dependency graph contains a cycle through `{0}`")]
    Cycle(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("generator fit failed: {0}")]
    DegenerateFit(String),

    #[error("model fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("estimate is not estimable")]
    NonEstimable,

    #[error("aggregation cell has no records")]
    EmptyCell,

    #[error("power-law fit needs at least 3 distinct positive points, got {0}")]
    InsufficientPoints(usize),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown column kind `{0}`")]
    UnknownKind(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
