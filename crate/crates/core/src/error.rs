use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample exceeds space: requested {requested}, space has {available}")]
    SampleExceedsSpace { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty website catalog")]
    EmptyCatalog,

    #[error("{path}:{line}: {message}")]
    Trace {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("time {t_ms} precedes session arrival {arrival_ms}")]
    BeforeArrival { t_ms: u64, arrival_ms: u64 },

    #[error("tensor too large: {entries} entries exceeds limit {limit}")]
    TensorTooLarge { entries: u64, limit: u64 },

    #[error("empty grid or website list")]
    EmptyTensorInput,

    #[error("k = {k} exceeds sample count {samples}")]
    TooFewSamples { k: usize, samples: usize },

    #[error("kernel matrix not positive definite after jitter escalation")]
    NotPositiveDefinite,

    #[error("space exhausted")]
    SpaceExhausted,

    #[error("fewer samples ({samples}) than folds ({folds})")]
    TooFewForFolds { samples: usize, folds: usize },

    #[error("no training data")]
    NoData,

    #[error("rule map version regression: {published} <= {current}")]
    VersionRegression { published: u64, current: u64 },

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("empty results")]
    EmptyResults,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
