use thiserror::Error;

#[derive(Debug, Error)]
pub enum KprError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("crowd size must be at least 1 (an agent always counts itself)")]
    ZeroCrowd,

    #[error("the random strategy has no stay rule")]
    NoStayRule,

    #[error("convergence window holds {samples} samples, need at least 2")]
    DegenerateWindow { samples: usize },

    #[error("per-agent success history was not recorded for this run")]
    HistoryDisabled,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("world lines end on different days ({first} vs {other})")]
    MismatchedLines { first: u32, other: u32 },

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KprError>;
