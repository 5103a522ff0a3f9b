use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing dataset file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("integrity error in {file} line {line}: {message}")]
    Integrity {
        file: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("imbalance ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("head/tail partition needs at least 5 graphs, got {0}")]
    DegeneratePartition(usize),

    #[error("split infeasible: requested ratio {requested}, max achievable {max_achievable}")]
    InfeasibleSplit { requested: f64, max_achievable: f64 },

    #[error("allocation infeasible: {0}")]
    InfeasibleAllocation(String),

    #[error("similarity row of node {node} has no positive mass")]
    DegenerateRow { node: usize },

    #[error("edge homophily undefined on an empty edge set")]
    EmptyEdgeSet,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at epoch {epoch}: {what} = {value}")]
    Divergence {
        epoch: usize,
        what: &'static str,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
