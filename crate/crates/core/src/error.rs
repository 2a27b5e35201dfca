use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input is missing and the calibrator has no missing-value output")]
    MissingValueUnsupported,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid component: {0}")]
    Invalid(String),

    #[error("projection did not converge after {sweeps} sweeps (max violation {violation:e})")]
    ProjectionFailure { sweeps: usize, violation: f64 },

    #[error("token not present in score table")]
    MissingToken,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid label {label} for {kind}")]
    Label { label: f64, kind: &'static str },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("subset enumeration budget exceeded: {generated} subsets (cap {cap})")]
    Budget { generated: usize, cap: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
