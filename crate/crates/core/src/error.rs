//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data ingestion, prior construction and the inference
/// engines.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data failed validation (bad counts, duplicate ids, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Malformed CSV input, with the 1-based line it was found on.
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },

    /// A parameter fell outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A prior specification is inconsistent or could not be completed.
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    /// A prior specification string could not be parsed.
    #[error("prior spec parse error: {0}")]
    PriorSpec(String),

    /// An iterative routine exhausted its iteration budget.
    #[error("no convergence: {0}")]
    NonConvergence(String),

    /// Numerical failure (non-finite values, indefinite matrix, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested operation is not available for this input.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    /// True when the error indicates a bad specification (data, priors,
    /// configuration) rather than a failure inside the numerics.
    pub fn is_specification(&self) -> bool {
        matches!(
            self,
            Error::InvalidData(_)
                | Error::CsvParse { .. }
                | Error::Domain(_)
                | Error::InvalidPrior(_)
                | Error::PriorSpec(_)
                | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
