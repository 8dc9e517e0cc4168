use thiserror::Error;

/// Errors surfaced by the attack laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("region rounds to an empty grid")]
    EmptyRegion,
    #[error("search region {region:?} is smaller than template {template:?}")]
    RegionTooSmall {
        region: (usize, usize),
        template: (usize, usize),
    },
    #[error("no candidate is disjoint from the reference box")]
    NoDisjointCandidate,
    #[error("target point lies outside the attackable neighbourhood")]
    TargetOutsideRegion,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("missing series: {0}")]
    MissingSeries(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
