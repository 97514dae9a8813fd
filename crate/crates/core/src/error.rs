use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("cannot split {available} instances over {clients} clients: at least {required} are required ({min_per_client} per client)")]
    Partition {
        available: usize,
        clients: usize,
        required: usize,
        min_per_client: usize,
    },

    #[error("fold error: {0}")]
    Fold(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("cannot normalize an empty count table")]
    EmptyCounts,

    #[error("pool error: {0}")]
    Pool(String),

    #[error("weight {weight} on zero-probability cell {cell}")]
    ZeroProbabilityCell { cell: String, weight: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("client {client_id}: {source}")]
    Client {
        client_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("message error: {0}")]
    Message(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
