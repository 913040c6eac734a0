//! The driving noise `L_t = W_{S_t}`: Gaussian increments conditional on the
//! clock, plus the analytic transform and moment objects of the induced jump
//! measure.
//!
//! Conditionally on the clock increments, `dL_i ~ N(0, dS_i)` independently
//! across cells and components. This conditional law is exact, so the noise
//! itself carries no time-discretization error; only the drift integration
//! does.

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::subordinator::{JumpFamily, SubordinatorIncrements, SubordinatorSpec};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// One realized noise path: clock increments and the conditional Gaussian
/// increments drawn from them, on a common grid.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub grid: Vec<f64>,
    /// Clock increments per cell (rows) and component (columns).
    pub ds: DMatrix<f64>,
    /// Noise increments, same layout.
    pub dl: DMatrix<f64>,
}

impl NoisePath {
    pub fn dim(&self) -> usize {
        self.ds.ncols()
    }

    pub fn n_cells(&self) -> usize {
        self.ds.nrows()
    }

    /// Merge every `factor` consecutive cells; increments are additive, so the
    /// coarse path is the same realization viewed on the thin grid.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || self.n_cells() % factor != 0 {
            return Err(Error::Invalid(format!(
                "coarsen: {} cells not divisible by {factor}",
                self.n_cells()
            )));
        }
        let n = self.n_cells() / factor;
        let d = self.dim();
        let mut ds = DMatrix::zeros(n, d);
        let mut dl = DMatrix::zeros(n, d);
        for m in 0..n {
            for k in 0..factor {
                for i in 0..d {
                    ds[(m, i)] += self.ds[(m * factor + k, i)];
                    dl[(m, i)] += self.dl[(m * factor + k, i)];
                }
            }
        }
        let grid = (0..=n).map(|m| self.grid[m * factor]).collect();
        Ok(NoisePath { grid, ds, dl })
    }
}

/// Draw the conditional Gaussian increments for a realized clock:
/// `dL = sqrt(dS) * xi` with independent standard normal `xi`.
pub fn sample_noise_path<R: Rng>(sub: &SubordinatorIncrements, rng: &mut R) -> NoisePath {
    let n = sub.n_cells();
    let d = sub.dim();
    let mut dl = DMatrix::zeros(n, d);
    for cell in 0..n {
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            dl[(cell, i)] = sub.deltas[(cell, i)].sqrt() * z;
        }
    }
    NoisePath {
        grid: sub.grid.clone(),
        ds: sub.deltas.clone(),
        dl,
    }
}

/// Characteristic exponent of the noise: `E e^{i z . L_t} = e^{-t Psi(z)}`.
///
/// Computed through the subordination identity
/// `Psi(z) = psi(z_1^2/2, ..., z_d^2/2)`, which puts the 1/2 on the drift
/// part as well: a pure-drift clock with unit rates gives `Psi(z) = |z|^2/2`,
/// standard Brownian motion.
pub fn characteristic_exponent(spec: &SubordinatorSpec, z: &[f64]) -> Result<f64> {
    if z.len() != spec.dim() {
        return Err(Error::Invalid(format!(
            "characteristic_exponent: z has {} entries, spec has {} components",
            z.len(),
            spec.dim()
        )));
    }
    let half_sq: Vec<f64> = z.iter().map(|zi| 0.5 * zi * zi).collect();
    spec.laplace_exponent(&half_sq)
}

/// `int (1 ^ |y|^2) nu_L(dy)` for the induced jump measure of `L`.
///
/// `nu_L` is the Gaussian mixture of the clock measure over the axes, so the
/// integral reduces per component to `int_0^inf m(u) nu_i(du)` with
/// `m(u) = E[1 ^ u Z^2]` in closed form (erf), and the outer `nu_i` integral
/// done by quadrature with the endpoint singularities substituted away.
pub fn levy_measure_small_moment(spec: &SubordinatorSpec) -> Result<f64> {
    if !spec.has_jumps() {
        return Err(Error::Domain(
            "levy_measure_small_moment needs a nonzero jump part".into(),
        ));
    }
    let mut total = 0.0;
    for fam in &spec.components {
        total += match *fam {
            JumpFamily::Zero => 0.0,
            JumpFamily::Stable { alpha, scale }
            | JumpFamily::TemperedStable { alpha, scale, .. } => {
                let tempered = matches!(fam, JumpFamily::TemperedStable { .. });
                let damp = |u: f64| match *fam {
                    JumpFamily::TemperedStable { lambda, .. } => (-lambda * u).exp(),
                    _ => 1.0,
                };
                // (0, 1]: m(u)/u is bounded (-> 1 at 0); v = u^{1-alpha}
                // removes the u^{-alpha} weight exactly.
                let low = adaptive_simpson(
                    |v| {
                        if v == 0.0 {
                            return 1.0 / (1.0 - alpha); // m(u)/u -> E Z^2 = 1
                        }
                        let u = v.powf(1.0 / (1.0 - alpha));
                        truncated_chi_mean(u) / u * damp(u) / (1.0 - alpha)
                    },
                    0.0,
                    1.0,
                    1e-11,
                )?;
                // (1, inf): m(u) <= 1; s = u^{-alpha} compactifies the tail.
                let high = adaptive_simpson(
                    |s| {
                        if s == 0.0 {
                            // u -> inf: m -> 1, tempering kills the mass
                            return if tempered { 0.0 } else { 1.0 / alpha };
                        }
                        let u = s.powf(-1.0 / alpha);
                        truncated_chi_mean(u) * damp(u) / alpha
                    },
                    0.0,
                    1.0,
                    1e-11,
                )?;
                scale * (low + high)
            }
        };
    }
    Ok(total)
}

/// `m(u) = E[min(1, u Z^2)]` for standard normal `Z`.
pub fn truncated_chi_mean(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let t = 1.0 / u.sqrt(); // threshold |Z| = t
    let root_half = std::f64::consts::FRAC_1_SQRT_2;
    let inside =
        libm::erf(t * root_half) - t * (2.0 / std::f64::consts::PI).sqrt() * (-0.5 * t * t).exp();
    u * inside + libm::erfc(t * root_half)
}
