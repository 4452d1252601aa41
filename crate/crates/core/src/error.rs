use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate scenario: {0}")]
    Degenerate(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("bandwidth {b} Hz is below the floor {b_min} Hz")]
    BandwidthFloor { b: f64, b_min: f64 },

    #[error("oracle refused: {0}")]
    OracleSize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter { name, reason: reason.into() }
}
