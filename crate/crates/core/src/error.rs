use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("radius {r} is not outside the horizon 2M = {horizon}")]
    InsideHorizon { r: f64, horizon: f64 },

    #[error("inverse tortoise map did not converge for r_* = {r_star} after {iterations} iterations")]
    NoConvergence { r_star: f64, iterations: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite observable `{observable}` at t = {time}")]
    NonFinite { observable: &'static str, time: f64 },

    #[error("dense propagator limited to n <= {max}, got n = {n}")]
    DenseSizeGuard { n: usize, max: usize },

    #[error("domain too small: run needs length {required:.3}, grid has {available:.3}")]
    DomainGuard { required: f64, available: f64 },

    #[error("fixed-point iteration is not contracting (measured ratio {ratio:.4})")]
    NonContraction { ratio: f64 },

    #[error("Dyson tail estimate {tail:.3e} exceeds tolerance {limit:.3e}")]
    TailTooLarge { tail: f64, limit: f64 },

    #[error("slope fit needs {needed} positive samples in window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("nonpositive value {value} at t = {time} in fit window")]
    NonPositiveSample { time: f64, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
