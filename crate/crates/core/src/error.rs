//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by schedules, oracles, coefficient computation, samplers
/// and metrics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate density: a mixture component has zero variance at t = {0}")]
    DegenerateDensity(f64),

    #[error("exact flow map requires a single-component mixture, got {0} components")]
    NotSingleGaussian(usize),

    #[error("parameterisation conversion undefined at t = {t}: {reason}")]
    DivisionByZero { t: f64, reason: &'static str },

    #[error("score-norm reparameterisation requires a score-magnitude profile")]
    MissingProfile,

    #[error("interpolation nodes contain duplicates")]
    DuplicateNodes,

    #[error("reparameterisation is singular (K <= 0) at t = {0}")]
    SingularReparameterisation(f64),

    #[error("coefficient table does not match the requested run: {0}")]
    TableMismatch(String),

    #[error("non-finite state after step {step} (t = {time})")]
    NonFiniteState { step: usize, time: f64 },

    #[error("batch shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("profile csv: {0}")]
    ProfileFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
