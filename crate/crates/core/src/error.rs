use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("non-finite activation at layer {layer}")]
    Overflow { layer: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unknown loss family `{name}`; supported families: {supported}")]
    UnknownLoss { name: String, supported: String },

    #[error("{set} score {value} of instance {instance} lies outside the domain {domain}")]
    Domain {
        set: &'static str,
        instance: usize,
        value: f64,
        domain: String,
    },

    #[error("degenerate gradient ratio at instance {instance}: fake-term derivative is zero")]
    DegenerateRatio { instance: usize },

    #[error("unstable gamma at instance {instance}: |1 - gamma| = {margin:e}")]
    Unstable { instance: usize, margin: f64 },

    #[error("non-finite gradient in {0}; parameters left untouched")]
    PoisonedUpdate(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training budget exhausted: {0}")]
    Budget(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
