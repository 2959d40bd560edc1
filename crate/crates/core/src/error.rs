use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("wake-up schedule activates {scheduled} stations but k = {k}")]
    ScheduleBudget { scheduled: u64, k: u32 },

    #[error("blocking instance budget violated: {0}")]
    BlockingBudget(String),

    /// A precondition of an experiment does not hold on the generated input.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
