use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is numerically rank deficient (smallest/largest singular value = {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("columns are not orthonormal (||B^T B - I||_F = {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("input contains non-finite entries")]
    NonFinite,

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("projection onto the current estimate is zero")]
    ZeroProjection,

    #[error("estimate and ground truth have a right principal angle (zeta = 0)")]
    SingularOverlap,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
