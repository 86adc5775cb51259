use thiserror::Error;

/// Errors raised by the quantization library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("invalid tangent vector: {0}")]
    InvalidTangent(String),

    #[error("point lies on the cut locus of the base point")]
    CutLocus,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("mass mismatch: source mass {source_mass}, target mass {target_mass}")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, QuantError>;
