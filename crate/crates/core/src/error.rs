use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparseArdError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("system is numerically singular even with diagonal jitter {jitter:e}")]
    SingularSystem { jitter: f64 },

    #[error("coordinate {index} has zero weight and cannot be rescaled")]
    DegenerateWeight { index: usize },

    #[error("residual sum of squares is zero; noise variance floored at {floor:e}")]
    DegenerateResidual { floor: f64 },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("feature library would have {columns} columns, above the cap of {cap}")]
    DimensionOverflow { columns: usize, cap: usize },

    #[error("grid has {points} points, at least {min} required")]
    GridTooSmall { points: usize, min: usize },

    #[error("series has {len} samples, at least {min} required")]
    SeriesTooShort { len: usize, min: usize },

    #[error("cannot sample {requested} rows from {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, SparseArdError>;
