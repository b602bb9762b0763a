use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a formula (non-positive distance, λ ≥ 1, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs disagree with each other (dimension mismatch, wrong node count).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    /// Eigensolver failure or a non-finite value produced during training.
    #[error("numerical error: {message}\n{dump}")]
    Numerical { message: String, dump: String },

    /// No rate combination satisfies the density constraint.
    #[error("no rate assignment reaches lambda <= {target} (smallest achievable lambda is {min_lambda})")]
    Infeasible { target: f64, min_lambda: f64 },

    /// A training run failed; `partial` holds every epoch logged before the
    /// failure.
    #[error("training aborted after {} logged records: {source}", partial.records.len())]
    TrainingAborted {
        partial: Box<crate::dpsgd::TrainingTrace>,
        source: Box<Error>,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
