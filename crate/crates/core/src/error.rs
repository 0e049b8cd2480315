use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("response column {0} not found")]
    MissingResponse(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid dimensions: {0}")]
    Dimensions(String),

    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dataset is already centered")]
    AlreadyCentered,

    #[error("dataset must be centered first")]
    NotCentered,

    #[error("series of length {len} is too short for {order} lags at horizon {horizon}")]
    SeriesTooShort {
        len: usize,
        order: usize,
        horizon: usize,
    },

    #[error("requested {requested} components but the achievable rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("design matrix has rank 0")]
    ZeroRank,

    #[error("design must have full column rank with p < n (rank {rank}, p {p}, n {n})")]
    NotFullRank { rank: usize, p: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contrast vector is zero")]
    DegenerateContrast,

    #[error("contrast is not estimable: it is orthogonal to the row space of the design")]
    NonEstimableContrast,

    #[error("confidence level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("every (lambda, n_star) grid pair is infeasible: {0}")]
    AllPairsInfeasible(String),

    #[error("replication {replication}, estimator {estimator}: {reason}")]
    StudyAborted {
        replication: usize,
        estimator: String,
        reason: String,
    },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

impl Error {
    /// True for errors caused by bad input files or arguments rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::RaggedRow { .. }
                | Error::MissingResponse(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::UnknownLabel(_)
        )
    }
}
