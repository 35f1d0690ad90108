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

    #[error("empty dataset")]
    EmptyDataset,

    #[error("row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    BadCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("cholesky factorization failed (last jitter tried {jitter:e})")]
    Factorization { jitter: f64 },

    #[error("fit failed at bandwidth a = {a}: {source}")]
    FitAtBandwidth {
        a: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("mcmc chain stalled: {0}")]
    ChainStalled(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("graph disconnected: largest component has {largest} nodes, cannot embed into {d_tilde} dimensions")]
    DisconnectedGraph { largest: usize, d_tilde: usize },

    #[error("quadrature too coarse: {points} points for a = {a} (need at least {needed})")]
    QuadratureResolution { points: usize, a: f64, needed: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Factorization { .. } | Error::ChainStalled(_) | Error::NonFinite(_) => true,
            Error::FitAtBandwidth { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
