//! Error type shared by every module.

use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("NonPositiveLrv: long-run variance {0} is not positive")]
    NonPositiveLrv(f64),

    #[error("FactorizationFailure: covariance not positive definite at step {step} (prediction variance {variance})")]
    FactorizationFailure { step: usize, variance: f64 },

    #[error("NonFinite: {0}")]
    NonFinite(String),

    #[error("NotPsd: {0}")]
    NotPsd(String),

    #[error("TruncationTooCoarse: lambda_J/lambda_1 = {ratio:e} exceeds {limit:e} at J = {j}")]
    TruncationTooCoarse { j: usize, ratio: f64, limit: f64 },

    #[error("UnequalGroups: K = {k} does not divide T = {t}")]
    UnequalGroups { k: usize, t: usize },

    #[error("ZeroVariance: all group means are equal")]
    ZeroVariance,

    #[error("DegenerateLrv: estimate {0:e} is not positive")]
    DegenerateLrv(f64),

    #[error("InvalidInput: {0}")]
    InvalidInput(String),

    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short variant name, printed by the command-line front end.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveLrv(_) => "NonPositiveLrv",
            Error::FactorizationFailure { .. } => "FactorizationFailure",
            Error::NonFinite(_) => "NonFinite",
            Error::NotPsd(_) => "NotPsd",
            Error::TruncationTooCoarse { .. } => "TruncationTooCoarse",
            Error::UnequalGroups { .. } => "UnequalGroups",
            Error::ZeroVariance => "ZeroVariance",
            Error::DegenerateLrv(_) => "DegenerateLrv",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
