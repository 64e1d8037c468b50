use thiserror::Error;

#[derive(Debug, Error)]
pub enum UhwtError {
    #[error("split leaves a child with no members")]
    EmptyChild,
    #[error("point lies outside the tree domain")]
    OutOfDomain,
    #[error("input is empty")]
    EmptyInput,
    #[error("tree has no internal nodes")]
    NoInternalNodes,
    #[error("edge endpoints are antipodal")]
    AntipodalPoints,
    #[error("degenerate spherical triangle")]
    DegenerateTriangle,
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("too few posterior draws: {0}")]
    TooFewDraws(usize),
    #[error("posterior recursion exceeded {0} memo entries")]
    ExplosionGuard(usize),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("payload truncated")]
    TruncatedPayload,
    #[error("unknown signal `{0}`")]
    UnknownSignal(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, UhwtError>;
