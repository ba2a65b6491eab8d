use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid sampling rate {sr}: must satisfy 0 < sr <= 1")]
    InvalidSamplingRate { sr: f64 },

    #[error("sampling count for sr={sr} on {width}x{height} is below 1")]
    SamplingCountTooSmall { sr: f64, width: usize, height: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("mask entries must be exactly -1 or +1 (found {found})")]
    NonBinaryMask { found: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("order {order} is not a power of two")]
    NotPowerOfTwo { order: usize },

    #[error("requested {count} masks but order is {order}")]
    CountExceedsOrder { count: usize, order: usize },

    #[error("regularization weight must be nonnegative (got {weight})")]
    NegativeRegWeight { weight: f64 },

    #[error("solver did not converge: relative residual {residual:.3e} after {iters} iterations (tol {tol:.3e})")]
    DidNotConverge { iters: usize, residual: f64, tol: f64 },

    #[error("value out of range in {context}: {value}")]
    OutOfRange { context: String, value: f64 },

    #[error("empty dataset: {context}")]
    EmptyDataset { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("discriminator step requested during warm-up (epoch {epoch}, warm-up {warmup})")]
    DiscriminatorDuringWarmup { epoch: usize, warmup: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch { expected: expected.into(), got: got.into() }
    }
}
