use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument outside the domain of a function (negative time, non-positive step, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The forward solve produced a non-finite value.
    #[error("forward solve diverged at step {step} (t = {time})")]
    Diverged { step: usize, time: f64 },

    /// Mismatched shapes or otherwise violated preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("sigma_dif calibration failed: {0}")]
    Calibration(String),

    /// A reference computation (finite differences, Runge-Kutta) failed.
    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}
