use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("state {state:?} lies outside the state space (capacity {capacity})")]
    StateOutOfRange { state: Vec<u32>, capacity: u32 },

    #[error("state space too large for exact solve: {required} state-time pairs exceed budget {budget}")]
    BudgetExceeded { required: u64, budget: u64 },

    #[error("sample {value} outside support [{lower}, {upper}]")]
    SampleOutOfSupport { value: f64, lower: f64, upper: f64 },

    #[error("at least {required} validation samples are needed, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
