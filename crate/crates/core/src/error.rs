use thiserror::Error;

/// Errors produced by the estimation and planning routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corruption fraction {epsilon} is at or beyond the identifiability limit 0.5")]
    CorruptionTooLarge { epsilon: f64 },

    #[error("attack strategy `{0}` needs the true reward parameter as side information")]
    MissingSideInfo(&'static str),

    #[error("filter degenerate: every point was removed (epsilon too large or variance misestimated)")]
    FilterDegenerate,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("insufficient coverage at step {step}")]
    InsufficientCoverage { step: usize },

    #[error("gradient batch too small: {batch} samples for dimension {dim}")]
    GradientBatchTooSmall { batch: usize, dim: usize },

    #[error("oracle `{0}` does not provide subgradients")]
    NotFirstOrder(&'static str),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
