use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature `{feature}`: value {value} out of range (limit {limit})")]
    Encoding {
        feature: String,
        value: usize,
        limit: usize,
    },

    #[error("feature `{0}` missing from raw context")]
    MissingFeature(String),

    #[error("feature `{0}` is not part of the schema")]
    UnknownFeature(String),

    #[error("context space has {size} combinations, cap is {cap}")]
    Enumeration { size: u128, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("controller index {index} invalid for ensemble of {k}")]
    InvalidController { index: usize, k: usize },

    #[error("fit failed at iteration {iteration}: {reason}")]
    Fit { iteration: usize, reason: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("candidate pool is empty")]
    EmptyCandidates,

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error originates from numerical computation rather than
    /// from bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Fit { .. } | Error::Numeric(_) => true,
            Error::AtRound { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
