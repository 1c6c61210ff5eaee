use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("covariance of phase {phase} is singular after regularization")]
    SingularCovariance { phase: usize },

    #[error("volume potential became non-finite after {iteration} updates")]
    NonFinite { iteration: usize },

    #[error("marginal masses differ: {a} vs {b}")]
    MassMismatch { a: f64, b: f64 },

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] ::image::ImageError),
}
