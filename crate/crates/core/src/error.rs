use thiserror::Error;

use crate::npmle::TailPolicy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no uncensored records: the duration distribution cannot be estimated")]
    NoEvents,

    #[error("largest observed total ({largest_censored}) is censored; survivor function undefined beyond it (tail policy: {policy})")]
    UndefinedTail { largest_censored: f64, policy: TailPolicy },

    #[error("uncensored total {total} is not a support point")]
    SupportMismatch { total: f64 },

    #[error("invalid counts: n = {n}, s = {s}")]
    InvalidCounts { n: u64, s: u64 },

    #[error("invalid prevalence {0}: must lie in (0, 1)")]
    InvalidPrevalence(f64),

    #[error("mean duration must be positive, got {0}")]
    ZeroDuration(f64),

    #[error("category #{category} has cases but zero population probability")]
    ZeroAgeProbability { category: usize },

    #[error("age distribution does not cover [{from}, {to})")]
    CoverageGap { from: f64, to: f64 },

    #[error("age-specific denominator must be positive, got {0}")]
    ZeroDenominator(f64),

    #[error("record category {0:?} is missing from the age distribution")]
    MissingAgeCategory(String),

    #[error("{degenerate} of {replicates} bootstrap replicates degenerate (limit 20%)")]
    TooFewValidReplicates { degenerate: usize, replicates: usize },

    #[error("exchangeability test needs at least {required} uncensored records, found {found}")]
    TooFewEvents { found: usize, required: usize },

    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),

    #[error("prevalence {0} outside (0, 1)")]
    PrevalenceOutOfRange(f64),

    #[error("duration distribution has an infinite moment")]
    InfiniteMoment,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
