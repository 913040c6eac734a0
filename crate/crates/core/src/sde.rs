//! Left-point Euler integration of `dX = b(X) dt + A dL` along a realized
//! noise path, together with the Jacobian flow `J' = grad b(X) J` and its
//! inverse `K' = -K grad b(X)`.
//!
//! Only the drift is discretized: the noise increments are exact draws from
//! their conditional law, absorbed at the end of each cell. `K` is advanced
//! by its own equation instead of inverting `J`, which keeps the cost at one
//! matrix product per flow per step and turns `K J - I` into a free
//! consistency diagnostic of order one in the step size.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::NoisePath;
use nalgebra::{DMatrix, DVector};

/// Default ceiling on the Lyapunov value before a path is declared blown up.
pub const DEFAULT_LYAPUNOV_CEILING: f64 = 1e12;

/// Uniform grid `0, h, 2h, ..., n h` covering `[0, t]` with `n = round(t/h)`.
pub fn uniform_grid(t: f64, h: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && h > 0.0 && h <= t) {
        return Err(Error::Invalid(format!(
            "uniform_grid: bad t = {t}, h = {h}"
        )));
    }
    let n = (t / h).round() as usize;
    if n == 0 || ((n as f64) * h - t).abs() > 1e-9 * t {
        return Err(Error::Invalid(format!(
            "step {h} does not divide horizon {t}"
        )));
    }
    Ok((0..=n).map(|i| i as f64 * h).collect())
}

/// One in-flight integration: state, flows, and running diagnostics.
/// `integrate_path` materializes full arrays; ensemble code drives the
/// stepper directly and keeps only summaries.
pub struct Stepper<'m> {
    model: &'m ModelSpec,
    pub t: f64,
    pub state: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub inverse_jacobian: DMatrix<f64>,
    pub lyapunov_sup: f64,
    pub step_index: usize,
    ceiling: f64,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m ModelSpec, x0: DVector<f64>, ceiling: f64) -> Result<Self> {
        if x0.len() != model.dim {
            return Err(Error::Invalid(format!(
                "initial state has dim {}, model needs {}",
                x0.len(),
                model.dim
            )));
        }
        let h0 = model.lyapunov(&x0);
        Ok(Stepper {
            model,
            t: 0.0,
            state: x0,
            jacobian: DMatrix::identity(model.dim, model.dim),
            inverse_jacobian: DMatrix::identity(model.dim, model.dim),
            lyapunov_sup: h0,
            step_index: 0,
            ceiling,
        })
    }

    /// Advance one cell: `X += b(X) h + A dL`, flows by the same left-point
    /// rule with `grad b` frozen at the cell start.
    pub fn step(&mut self, h: f64, dl: &DVector<f64>) -> Result<()> {
        let b = self.model.drift(&self.state);
        let grad = self.model.drift_jacobian(&self.state);
        self.state += b * h + &self.model.diffusion * dl;
        let jd = &grad * &self.jacobian;
        self.jacobian += jd * h;
        let kd = &self.inverse_jacobian * &grad;
        self.inverse_jacobian -= kd * h;
        self.t += h;
        self.step_index += 1;
        let lyap = self.model.lyapunov(&self.state);
        if !lyap.is_finite() || lyap > self.ceiling {
            return Err(Error::BlowUp {
                step: self.step_index,
                t: self.t,
                lyapunov: lyap,
                ceiling: self.ceiling,
            });
        }
        self.lyapunov_sup = self.lyapunov_sup.max(lyap);
        Ok(())
    }
}

/// A fully materialized path: states and flows on the grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub jacobian: Vec<DMatrix<f64>>,
    pub inverse_jacobian: Vec<DMatrix<f64>>,
    /// Running `sup_{s <= t_n} H(X_s)` per grid point.
    pub lyapunov_sup: Vec<f64>,
    pub noise: NoisePath,
}

impl Trajectory {
    pub fn terminal(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least the initial state")
    }

    /// Largest `||K_n J_n - I||` over the grid; order-one in the step size.
    pub fn max_inverse_defect(&self) -> f64 {
        let id = DMatrix::identity(self.states[0].len(), self.states[0].len());
        self.jacobian
            .iter()
            .zip(&self.inverse_jacobian)
            .map(|(j, k)| (k * j - &id).norm())
            .fold(0.0, f64::max)
    }
}

/// Integrate with the default blow-up ceiling.
pub fn integrate_path(
    model: &ModelSpec,
    x0: &DVector<f64>,
    noise: &NoisePath,
) -> Result<Trajectory> {
    integrate_path_with_ceiling(model, x0, noise, DEFAULT_LYAPUNOV_CEILING)
}

pub fn integrate_path_with_ceiling(
    model: &ModelSpec,
    x0: &DVector<f64>,
    noise: &NoisePath,
    ceiling: f64,
) -> Result<Trajectory> {
    if noise.dim() != model.dim {
        return Err(Error::Invalid(format!(
            "noise dim {} does not match model dim {}",
            noise.dim(),
            model.dim
        )));
    }
    let n = noise.n_cells();
    let mut stepper = Stepper::new(model, x0.clone(), ceiling)?;
    let mut states = Vec::with_capacity(n + 1);
    let mut jacobian = Vec::with_capacity(n + 1);
    let mut inverse_jacobian = Vec::with_capacity(n + 1);
    let mut lyapunov_sup = Vec::with_capacity(n + 1);
    states.push(stepper.state.clone());
    jacobian.push(stepper.jacobian.clone());
    inverse_jacobian.push(stepper.inverse_jacobian.clone());
    lyapunov_sup.push(stepper.lyapunov_sup);
    for cell in 0..n {
        let h = noise.grid[cell + 1] - noise.grid[cell];
        let dl = noise.dl.row(cell).transpose();
        stepper.step(h, &dl)?;
        states.push(stepper.state.clone());
        jacobian.push(stepper.jacobian.clone());
        inverse_jacobian.push(stepper.inverse_jacobian.clone());
        lyapunov_sup.push(stepper.lyapunov_sup);
    }
    Ok(Trajectory {
        grid: noise.grid.clone(),
        states,
        jacobian,
        inverse_jacobian,
        lyapunov_sup,
        noise: noise.clone(),
    })
}

/// `sup_{n} H(X_{t_n})` over the whole trajectory.
pub fn sup_lyapunov(traj: &Trajectory) -> f64 {
    *traj
        .lyapunov_sup
        .last()
        .expect("trajectory has at least the initial state")
}
