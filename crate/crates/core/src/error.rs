use thiserror::Error;

/// Errors raised by the planning library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityDomain(f64),

    #[error("conditioning covariance at step {step} is singular")]
    SingularCovariance { step: usize },

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid step range: {0}")]
    InvalidStep(String),

    #[error("observation at step {step} leaves no prediction horizon (T = {horizon})")]
    EmptyHorizon { step: usize, horizon: usize },

    #[error("reference coincides with the predicted obstacle mean at step {step}")]
    DegenerateGeometry { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("QP solver did not converge within {iterations} iterations")]
    SolverFailure { iterations: usize },

    #[error("predicted covariance at (t = {t}, tau = {tau}) deviates from the margin table by {deviation:e}")]
    CovarianceMismatch { t: usize, tau: usize, deviation: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
