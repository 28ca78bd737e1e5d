use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite value in {what} at row {row}, column {column}")]
    NonFinite {
        what: &'static str,
        row: usize,
        column: usize,
    },

    #[error("{path}: row {row}, column {column}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("response column `{0}` not found")]
    MissingResponse(String),

    #[error("column `{0}` is constant; cannot standardize")]
    ConstantColumn(String),

    #[error("split sizes {requested} exceed the {available} available rows")]
    SplitTooLarge { requested: usize, available: usize },

    #[error("unpenalized weights need more training rows than covariates (n = {n}, p = {p})")]
    Infeasible { n: usize, p: usize },

    #[error("response has zero covariance with every covariate")]
    ZeroCovariance,

    #[error("no variable survived preprocessing ({stage} filter)")]
    NoSurvivors { stage: &'static str },

    #[error("{what} did not converge (KKT residual {kkt_residual:.3e} after {iterations} iterations)")]
    NotConverged {
        what: &'static str,
        kkt_residual: f64,
        iterations: usize,
    },

    #[error("every grid point failed to converge: {0}")]
    AllFitsFailed(String),

    #[error("{0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
