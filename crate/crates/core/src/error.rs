use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition (shapes, index ranges, labels).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared inside the recursion.
    #[error("numeric fault at step {step}: {detail}")]
    NumericFault { step: usize, detail: String },

    /// Optimization gave up after repeated numeric faults.
    #[error("optimization aborted after {attempts} failed attempts at iteration {iteration}: {detail}")]
    OptimizationAborted {
        iteration: usize,
        attempts: usize,
        detail: String,
    },

    /// Sampling could not produce a valid particle set.
    #[error("sampling failed at iteration {iteration}: {detail}")]
    Sampling { iteration: usize, detail: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
