use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("graph is not acyclic")]
    NotAcyclic,
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("invalid threshold {0}: must be nonnegative")]
    InvalidThreshold(f64),
    #[error("node {node} out of range for graph with {p} nodes")]
    InvalidNode { node: usize, p: usize },
    #[error("invalid edge density: probability {0} exceeds 1")]
    InvalidDensity(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("noise covariance is not positive semidefinite")]
    NotPsd,
    #[error("Poisson rate {rate} exceeds the supported maximum")]
    RateOverflow { rate: f64 },
    #[error("gene {gene} is degenerate: {reason}")]
    DegenerateGene { gene: usize, reason: String },
    #[error("invalid scale at row {row}, gene {gene}: {value}")]
    InvalidScale { row: usize, gene: usize, value: f64 },
    #[error("genes without any intervention: {0:?}")]
    MissingIntervention(Vec<usize>),
    #[error("gene {gene} has no environment with a usable mean shift")]
    WeakIntervention { gene: usize },
    #[error("iterate left the domain of the acyclicity function")]
    DomainViolation,
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("no acyclic solution: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("score undefined: {0}")]
    UndefinedScore(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty sample")]
    EmptySample,
    #[error("dataset has no control environment")]
    MissingControl,
    #[error("manifest error: {0}")]
    ManifestError(String),
    #[error("data error in {path}, row {row}, column {column}: {reason}")]
    DataError {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
