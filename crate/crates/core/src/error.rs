use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("training environment is not reproducible: {0}")]
    DigestMismatch(String),

    #[error("perturbed runs followed different batch schedules")]
    ScheduleDivergence,

    #[error("inverse-HVP recursion diverged (scale={scale}, damping={damping})")]
    Divergence { scale: f64, damping: f64 },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("cannot select {k} exemplars from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },

    #[error("no influence record for candidate {0}")]
    MissingRecord(u64),

    #[error("unknown example id {0}")]
    UnknownId(u64),

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
