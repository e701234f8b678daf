use thiserror::Error;

/// Errors surfaced by the engine. Dimension mismatches are configuration
/// bugs and carry enough context to locate the offending wiring.
#[derive(Debug, Error)]
pub enum DmfError {
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("all history positions are masked; cannot normalize attention")]
    EmptyHistory,

    #[error("item {item_id} has a zero-norm multimodal vector")]
    ZeroNormVector { item_id: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("malformed record at line {line}: {detail}")]
    MalformedRecord { line: usize, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DmfError>;
