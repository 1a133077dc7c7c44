use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid generator, row {row}: {reason}")]
    InvalidGenerator { row: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state {state} outside 0..{d}")]
    StateOutOfRange { state: usize, d: usize },

    #[error("control {u} outside action set [{lo}, {hi}]")]
    OutsideActionSet { u: f64, lo: f64, hi: f64 },

    #[error("non-finite Hamiltonian at v = {v}")]
    NonFiniteHamiltonian { v: f64 },

    #[error("non-finite state at step {step}, particle {particle}")]
    NonFiniteState { step: usize, particle: usize },

    #[error("non-finite adjoint value at step {step}")]
    NonFiniteAdjoint { step: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("mean-field curves not converged (last residual {residual:e})")]
    NotConverged { residual: f64 },
}

impl Error {
    /// True for aborts caused by numerics (overflow, NaN) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteHamiltonian { .. }
                | Error::NonFiniteState { .. }
                | Error::NonFiniteAdjoint { .. }
                | Error::NotConverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
