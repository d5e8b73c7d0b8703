use num_bigint::BigUint;
use thiserror::Error;

/// Errors raised by the search library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("search space holds {architectures} architectures ({cell_structures} cell structures), above the enumeration cap {cap}")]
    SpaceTooLarge {
        cell_structures: BigUint,
        architectures: BigUint,
        cap: u64,
    },

    #[error("cannot decode architecture: {0}")]
    Decode(String),

    #[error("distribution invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite score {value} at edge {edge}")]
    NonFiniteScore { edge: String, value: f64 },

    #[error("state is not converged: {0} edges still have more than one alive operation")]
    NotConverged(usize),

    #[error("evaluation records incomplete: {0}")]
    Records(String),

    #[error("evaluator failed in round {round}: {source}")]
    Evaluator {
        round: usize,
        #[source]
        source: EvalError,
    },

    #[error("round {round}: {source}")]
    InRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-unique optimum: {0}")]
    NonUniqueOptimum(String),

    #[error("benchmark format error at line {line}: {message}")]
    BenchmarkFormat { line: usize, message: String },

    #[error("landscape definition error: {0}")]
    Landscape(String),

    #[error("event log error: {0}")]
    EventLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure reported by an [`Evaluator`](crate::engine::Evaluator).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("architecture `{key}` has only {available} recorded epochs, epoch {requested} requested")]
    EpochOverflow {
        key: String,
        available: usize,
        requested: usize,
    },

    #[error("non-finite loss at {location}")]
    NonFiniteLoss { location: String },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("{0}")]
    Other(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
