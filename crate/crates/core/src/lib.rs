//! levyflow: Monte Carlo simulation and verification for degenerate stochastic
//! Hamiltonian systems driven by anisotropic subordinated Brownian motion.
//!
//! The driving noise is `L_t = W_{S_t}`, a Brownian motion run along independent
//! per-component random clocks (subordinators). The engine samples the clocks
//! exactly, synthesizes the Gaussian noise conditionally on them, integrates the
//! state SDE together with its Jacobian flow and inverse flow, and assembles the
//! pathwise Malliavin covariance matrix from the explicit flow formula.
//!
//! On top of the sampler sits a probe suite ([`verify`]) that turns the
//! analytic properties of these systems (transform identities, small-deviation
//! bounds, exponential moments, generator identities, Fokker-Planck residuals,
//! covariance scaling, density tails) into quantitative pass/fail checks with
//! Monte Carlo error bars.
//!
//! Everything is deterministic given a seed: parallel ensembles derive one
//! counter-based RNG stream per path, so results do not depend on the worker
//! count or scheduling.

pub mod error;
pub mod malliavin;
pub mod model;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod subordinator;
pub mod verify;

pub use error::{Error, Result};
pub use malliavin::{covariance_matrix, CovarianceRecord, StepFunction, TimePath};
pub use model::{builtin_kinetic_model, ModelSpec, PotentialKind};
pub use noise::{characteristic_exponent, sample_noise_path, NoisePath};
pub use sde::{integrate_path, Trajectory};
pub use subordinator::{sample_increments, JumpFamily, SubordinatorIncrements, SubordinatorSpec};
pub use verify::{ensemble_run, EnsembleOpts, EnsembleResult, Verdict};
