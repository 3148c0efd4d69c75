use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hilbert space: {0}")]
    InvalidSpace(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("operands live on different Hilbert spaces")]
    SpaceMismatch,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("step size underflow at t = {t} (h = {h:e}); stiff segment")]
    StepUnderflow { t: f64, h: f64 },
    #[error("density matrix lost positivity: minimum eigenvalue {min_eig:e} at t = {t}")]
    PositivityViolation { t: f64, min_eig: f64 },
    #[error("basis is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
