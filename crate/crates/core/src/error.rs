use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate fit: need at least {needed} distinct token counts, got {distinct}")]
    DegenerateFit { needed: usize, distinct: usize },

    #[error("fitted decode slope p = {slope} is not positive; profile is unusable")]
    NonPositiveSlope { slope: f64 },

    #[error("length {n} outside [1, {n_model}]")]
    OutOfRange { n: u64, n_model: u32 },

    #[error("no lookup entry for prompt id {0}")]
    LookupMiss(u64),

    #[error("empty input")]
    EmptyInput,

    #[error("predictor constant term {c_p} ms exceeds prefill window {prefill_ms} ms")]
    NoBudget { c_p: f64, prefill_ms: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trace arrivals decrease at job {id} ({arrival_ms} ms after {previous_ms} ms)")]
    NonMonotoneTrace { id: u64, arrival_ms: f64, previous_ms: f64 },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, column: u64, message: String },

    #[error("{}: unit '{found}' is not supported (expected 'ms')", path.display())]
    UnitMismatch { path: PathBuf, found: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, column: u64, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, column, message: message.into() }
    }
}
