use thiserror::Error;

/// Errors produced by model construction, sampling, and post-processing.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("evaluation point {point:?} lies outside the basis domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("tensor bases are supported up to 4 dimensions, got {0}")]
    UnsupportedDimension(usize),

    #[error("invalid model state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite{}", if *.jittered { " (even after jitter)" } else { "" })]
    NotPositiveDefinite { jittered: bool },

    #[error("orthogonality constraint system is singular")]
    ConstraintSingular,

    #[error("membership rescale is degenerate: {0}")]
    RescaleDegenerate(String),

    #[error("credible band is degenerate: {0}")]
    DegenerateBand(String),

    #[error("temperature ladder requires beta_max >= 1, got {0}")]
    InvalidLadder(f64),

    #[error("dataset is empty")]
    EmptyData,

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("archive format error: {0}")]
    ArchiveFormat(String),

    #[error("chain {chain} failed: {source}")]
    ChainFailed {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
