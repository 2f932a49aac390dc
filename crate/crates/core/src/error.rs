use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ItpError {
    #[error("invalid contrast k = {0}: k must be positive and different from 1")]
    InvalidContrast(f64),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("square-root argument {0} lies on the branch cut")]
    BranchFailure(String),
    #[error("boundary denominator degenerate: |den| = {value:e} < {threshold:e}")]
    Degenerate { value: f64, threshold: f64 },
    #[error("characteristic roots coincide")]
    CoincidentRoots,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("series diverges: increment grew for three consecutive terms at j = {0}")]
    Divergence(usize),
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("mollifier width {eps} under-resolved for spacing {h} (need eps >= 2h)")]
    UnderResolved { eps: f64, h: f64 },
    #[error("empty sample grid")]
    EmptyGrid,
    #[error("regularisation parameter is zero and the operator is rank deficient")]
    RankDeficient,
}

pub type Result<T> = std::result::Result<T, ItpError>;
