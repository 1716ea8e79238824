use thiserror::Error;

use crate::linalg::RankResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid exponent {0}: matrix powers require a non-negative integer")]
    InvalidExponent(i64),

    #[error("regressor is rank deficient{}: rank {} of {} columns", window_label(*.window), .rank.rank, .columns)]
    RankDeficientRegressor {
        rank: RankResult,
        columns: usize,
        /// Index of the first sample of the offending window, when known.
        window: Option<usize>,
    },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("system has no functional output matrix F")]
    MissingFunctional,

    #[error("time domain mismatch: system is {system}, sampling sequence is {sequence}")]
    DomainMismatch {
        system: crate::system::TimeDomain,
        sequence: crate::system::TimeDomain,
    },

    #[error("pair is not observable: rank {} < {n}", .rank.rank)]
    NotObservable { rank: RankResult, n: usize },

    #[error("unsupported Jordan structure: {0}")]
    UnsupportedStructure(String),

    #[error("invalid structured Q: {0}")]
    InvalidQ(String),

    #[error("sampling design failed: {0}")]
    DesignFailure(String),

    #[error("missing certificate: {0}")]
    MissingCertificate(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
}

fn window_label(window: Option<usize>) -> String {
    match window {
        Some(j) => format!(" in window starting at sample {j}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
