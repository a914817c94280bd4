use alloc::string::String;
use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value produced by the integrator")]
    NumericOverflow,
    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("component {component} is constant over the training range")]
    DegenerateScaler { component: usize },
    #[error("density matrix trace drifted to {trace}")]
    NumericIntegrity { trace: f64 },
    #[error("ridge system is singular")]
    SingularSystem,
    #[error("closed-loop forecast diverged at step {step}")]
    ForecastDiverged { step: usize },
    #[error("tangent basis collapsed at step {step}")]
    TangentDegenerate { step: usize },
    #[error("Kaplan-Yorke dimension is ill-posed: {0}")]
    IllPosed(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
