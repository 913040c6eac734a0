//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The integrator hit the Lyapunov ceiling or produced a non-finite state.
    /// Coarse steps on super-linear drifts can overflow even when the true
    /// dynamics are stable; callers may retry with a finer grid.
    #[error("path blew up at step {step} (t = {t}): H = {lyapunov:e} exceeds ceiling {ceiling:e}")]
    BlowUp {
        step: usize,
        t: f64,
        lyapunov: f64,
        ceiling: f64,
    },

    /// The tempered-stable rejection sampler exhausted its iteration cap.
    #[error("rejection cap {cap} exceeded while sampling a tempered increment (lambda = {lambda}, cell length = {cell_len})")]
    RejectionCap {
        lambda: f64,
        cell_len: f64,
        cap: u64,
    },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("symmetric eigendecomposition did not converge")]
    Eigen,

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
