use thiserror::Error;

/// Errors surfaced by the numerics modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lag {lag} out of range: maximum lag is {max}")]
    LagOutOfRange { lag: usize, max: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("condition limit must exceed 1, got {0}")]
    InvalidConditionLimit(f64),

    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("{context}: matrix is singular beyond pseudo-inverse tolerance")]
    SingularSystem { context: &'static str },

    #[error("rank-deficient regression design matrix ({context})")]
    RankDeficientDesign { context: &'static str },

    #[error("objective is not finite (covariance pathology)")]
    NonFiniteObjective,

    #[error("autoregressive system is not stationary: spectral radius {spectral_radius}")]
    NonStationary { spectral_radius: f64 },

    #[error("filter has zero power under the data covariance")]
    ZeroPowerFilter,

    #[error("channel {index} has zero variance")]
    ZeroVarianceChannel { index: usize },

    #[error("series must contain at least 2 channels, got {found}")]
    TooFewChannels { found: usize },

    #[error("series contains non-finite values (channel {channel}, sample {sample})")]
    NonFiniteValue { channel: usize, sample: usize },

    #[error("optimizer failed to improve on the initial point in all restarts")]
    NoImprovement,
}

pub type Result<T> = std::result::Result<T, Error>;
