use thiserror::Error;

/// Errors raised by model construction, path functionals and the oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid jump law: {0}")]
    JumpLaw(String),
    #[error("invalid constraint law: {0}")]
    ConstraintLaw(String),
    #[error("invalid environment: {0}")]
    Environment(String),
    #[error("configuration error: {field}: {message}")]
    Config { field: String, message: String },
    #[error("level {level} is not reached within the path horizon")]
    LevelNotReached { level: i64 },
    #[error("no budget is known for visited site {0:?}")]
    MissingBudget(Vec<i64>),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("model excluded from theorem verification: {0}")]
    AssumptionExcluded(String),
    #[error("identity failure: {0}")]
    IdentityFailure(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
