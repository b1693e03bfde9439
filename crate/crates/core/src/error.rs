use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: negative weight {weight}")]
    NegativeWeight { line: u64, weight: f64 },

    #[error("no interaction records")]
    EmptyDataset,

    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios(Vec<f64>),

    #[error("invalid partition ratio {0}: must lie strictly between 0 and 1")]
    InvalidPartitionRatio(f64),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite factor value during ALS iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("line {line}: unknown {kind} key {key:?}")]
    UnknownKey {
        line: u64,
        kind: &'static str,
        key: String,
    },

    #[error("line {line}: non-finite score")]
    NonFiniteScore { line: u64 },

    #[error("user {user}: only {available} selectable items, {k} requested")]
    InsufficientCandidates {
        user: String,
        available: usize,
        k: usize,
    },

    #[error("instance too large for exhaustive search: C({n},{k}) exceeds {limit}")]
    InstanceTooLarge { n: usize, k: usize, limit: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no user has relevance judgments")]
    NoJudgments,

    #[error("diversity needs lists of at least 2 items, got K = {0}")]
    ListTooShort(usize),

    #[error("personalization needs at least 2 users, got {0}")]
    TooFewUsers(usize),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Configuration and input-validation problems, as opposed to failures
    /// while the pipeline is executing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_)
            | Error::InvalidRatios(_)
            | Error::InvalidPartitionRatio(_)
            | Error::Parse { .. }
            | Error::NegativeWeight { .. }
            | Error::UnknownKey { .. }
            | Error::NonFiniteScore { .. } => true,
            Error::File { source, .. } | Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
