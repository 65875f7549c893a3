use thiserror::Error;

/// Errors raised by model construction, exact oracles and the trainer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("agent index {agent} out of range for {n} agents")]
    AgentOutOfRange { agent: usize, n: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("enumeration cap exceeded: {size} global state-action pairs > cap {cap}")]
    EnumerationCap { size: usize, cap: usize },

    #[error("table too large: {entries} entries for agent {agent} (limit {limit})")]
    TableTooLarge {
        agent: usize,
        entries: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("ragged batch: trajectory {index} has length {len}, expected {expected}")]
    RaggedBatch {
        index: usize,
        len: usize,
        expected: usize,
    },

    #[error("NaN in {0}")]
    NaN(&'static str),

    #[error("non-finite value at iteration {iter}: {what}")]
    NumericAbort { iter: usize, what: String },

    #[error("singular linear system")]
    Singular,

    #[error("invalid config: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn malformed(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
