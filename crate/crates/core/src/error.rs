use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("circulant embedding not PSD: min eigenvalue {min_eig:e} vs max {max_eig:e}")]
    EmbeddingNotPsd { min_eig: f64, max_eig: f64 },
    #[error("field samples do not share grid and model")]
    MismatchedGrids,
    #[error("constraint covariance is degenerate (condition number {condition:e})")]
    DegenerateConstraintSet { condition: f64 },
    #[error("domain lies outside the labeled grid")]
    DomainOutsideGrid,
    #[error("level {level} coincides with a critical value {value}")]
    LevelAtCriticalValue { level: f64, value: f64 },
    #[error("bad scale: {0}")]
    BadScale(String),
    #[error("buffer {buffer} below required minimum {required}")]
    BufferTooSmall { buffer: f64, required: f64 },
    #[error("topological derivative not stabilized: {0}")]
    NotStabilized(String),
    #[error("pivotal covariance is degenerate")]
    DegenerateCovariance,
    #[error("sample variance is degenerate")]
    DegenerateVariance,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
