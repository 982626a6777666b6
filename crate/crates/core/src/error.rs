use thiserror::Error;

/// Errors surfaced by the simulation and learning primitives.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid feature partition: {0}")]
    InvalidPartition(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("split sizing: {0}")]
    SplitSizing(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("classifier weight vector is zero")]
    ZeroWeights,

    #[error("empty data")]
    EmptyData,

    #[error("cost matrix is not symmetric positive definite")]
    NotPsd,

    #[error("invalid bandwidth selection: {0}")]
    InvalidBandwidth(String),

    #[error("density underflow along the inverse-response segment")]
    DensityUnderflow,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
