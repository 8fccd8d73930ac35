use thiserror::Error;

use crate::graph::VariableKey;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("geodetic conversion did not converge after {iterations} iterations")]
    GeodeticNonConvergence { iterations: usize },

    #[error("invalid IMU step dt = {dt} s (must be in (0, 1])")]
    InvalidTimeStep { dt: f64 },

    #[error("unknown variable {0:?}")]
    UnknownVariable(VariableKey),

    #[error("IMU factor must connect consecutive epochs, got {from} -> {to}")]
    NonConsecutiveEpochs { from: usize, to: usize },

    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("linear system is singular or indefinite")]
    SingularSystem,

    #[error("insufficient observations: {got} < 4")]
    InsufficientObservations { got: usize },

    #[error("degenerate satellite geometry (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },

    #[error("infeasible route: {0}")]
    InfeasibleRoute(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("no overlapping epochs between estimate and truth")]
    EmptyOverlap,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
