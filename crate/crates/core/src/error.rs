use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse failure at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset has a single class; at least two are required")]
    SingleClass,
    #[error("label column {0} not found")]
    MissingLabelColumn(String),
    #[error("invalid stream spec: {0}")]
    InvalidSpec(String),
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    #[error("pool exhausted: {0}")]
    PoolExhausted(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("limit undefined; M rank-deficient")]
    LimitUndefined,
    #[error("task {task}: {source}")]
    AtTask {
        task: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_task(self, task: usize) -> Self {
        Error::AtTask {
            task,
            source: Box::new(self),
        }
    }
}
