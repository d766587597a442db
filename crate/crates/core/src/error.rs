use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("separation vector has zero length")]
    ZeroSeparation,
    #[error("particles {0} and {1} coincide")]
    CoincidentParticles(usize, usize),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("step rejected at t = {t}: pair distance {distance:e} below guard after {halvings} halvings")]
    StepRejected { t: f64, distance: f64, halvings: u32 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("overdamped dynamics require gamma > 0")]
    GammaZero,
    #[error("time {t} exceeds trajectory horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
    #[error("radicand of the Lyapunov square root is not positive ({0:e}); check shift constants")]
    NonPositiveRadicand(f64),
    #[error("{0}")]
    WrongBetaRegime(String),
    #[error("{0}")]
    RegimeMismatch(String),
    #[error("burn-in too short: {0}")]
    BurnInTooShort(String),
    #[error("ensemble too small: {got} < {min}")]
    EnsembleTooSmall { got: usize, min: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
