use thiserror::Error;

/// Errors raised by the statistic, quadrature and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The model or weight function lacks something the operation needs.
    #[error("capability error: {0}")]
    Capability(String),
    /// A non-finite value or a non-converging computation.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Inconsistent configuration (sizes, trimming counts, fractions).
    #[error("config error: {0}")]
    Config(String),
    /// A standing modelling assumption does not hold (e.g. sigma > 0).
    #[error("assumption violated: {0}")]
    Assumption(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
