//! Anisotropic subordinators: per-component jump families, exact increment
//! sampling, and the analytic transform objects (Laplace exponent, small-jump
//! rate `phi`, small-time index `theta`).
//!
//! Each component is an independent one-dimensional subordinator
//! `S^i_t = theta_i t + jumps`, so the product Levy measure lives on the
//! coordinate axes and every integral below reduces to one dimension.
//!
//! Increments are sampled exactly per grid cell: the one-sided stable law has
//! an exact sampler (Kanter's representation), and the tempered-stable
//! increment is obtained from it by exponential-tilting rejection with
//! acceptance probability `exp(-lambda * x)`. No small-jump truncation or
//! compensation enters the engine.

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use std::f64::consts::{E, PI};

/// Default cap on tempered-stable rejection iterations per increment.
pub const DEFAULT_REJECTION_CAP: u64 = 1_000_000;

/// Jump part of one subordinator component. `scale` is the coefficient of the
/// Levy density: `nu(du) = scale * u^(-1-alpha) du` (times `exp(-lambda u)`
/// for the tempered family) on `(0, inf)`.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpFamily {
    /// No jumps; the component is pure drift (possibly zero).
    Zero,
    Stable {
        alpha: f64,
        scale: f64,
    },
    TemperedStable {
        alpha: f64,
        scale: f64,
        lambda: f64,
    },
}

/// Levy density coefficient that normalizes the stable Laplace exponent to
/// `z^alpha` (and the tempered one to `(lambda+z)^alpha - lambda^alpha`).
pub fn unit_scale(alpha: f64) -> f64 {
    alpha / libm::tgamma(1.0 - alpha)
}

impl JumpFamily {
    pub fn stable_unit(alpha: f64) -> Self {
        JumpFamily::Stable {
            alpha,
            scale: unit_scale(alpha),
        }
    }

    pub fn tempered_unit(alpha: f64, lambda: f64) -> Self {
        JumpFamily::TemperedStable {
            alpha,
            scale: unit_scale(alpha),
            lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            JumpFamily::Zero => Ok(()),
            JumpFamily::Stable { alpha, scale } => {
                if !(0.0 < alpha && alpha < 1.0) {
                    return Err(Error::Invalid(format!(
                        "stable index alpha = {alpha} not in (0,1)"
                    )));
                }
                if !(scale > 0.0) {
                    return Err(Error::Invalid(format!(
                        "stable scale = {scale} must be positive"
                    )));
                }
                Ok(())
            }
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => {
                if !(0.0 < alpha && alpha < 1.0) {
                    return Err(Error::Invalid(format!(
                        "tempered index alpha = {alpha} not in (0,1)"
                    )));
                }
                if !(scale > 0.0 && lambda > 0.0) {
                    return Err(Error::Invalid(format!(
                        "tempered scale = {scale}, lambda = {lambda} must be positive"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Levy density at `u > 0`.
    pub fn levy_density(&self, u: f64) -> f64 {
        match *self {
            JumpFamily::Zero => 0.0,
            JumpFamily::Stable { alpha, scale } => scale * u.powf(-1.0 - alpha),
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => scale * u.powf(-1.0 - alpha) * (-lambda * u).exp(),
        }
    }

    /// Small-jump index: the `theta` this component alone supports at zero
    /// drift. `None` when there are no jumps at all.
    pub fn small_index(&self) -> Option<f64> {
        match *self {
            JumpFamily::Zero => None,
            JumpFamily::Stable { alpha, .. } => Some(alpha),
            JumpFamily::TemperedStable { alpha, .. } => Some(alpha),
        }
    }

    /// Jump part of the component Laplace exponent: `int (1 - e^{-zu}) nu(du)`.
    pub fn laplace_exponent(&self, z: f64) -> f64 {
        match *self {
            JumpFamily::Zero => 0.0,
            JumpFamily::Stable { alpha, scale } => {
                scale * libm::tgamma(1.0 - alpha) / alpha * z.powf(alpha)
            }
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => {
                scale * libm::tgamma(1.0 - alpha) / alpha
                    * ((lambda + z).powf(alpha) - lambda.powf(alpha))
            }
        }
    }

    /// `int_0^eps u nu(du)`: the truncated first moment entering `phi`.
    ///
    /// Stable: closed form. Tempered: the `u^{-alpha}` singularity on
    /// `(0, eps/2]` is removed exactly by the substitution `v = u^{1-alpha}`;
    /// the remainder on `[eps/2, eps]` is smooth and integrated adaptively.
    pub fn small_mean(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!(
                "small_mean needs eps > 0, got {eps}"
            )));
        }
        match *self {
            JumpFamily::Zero => Ok(0.0),
            JumpFamily::Stable { alpha, scale } => {
                Ok(scale * eps.powf(1.0 - alpha) / (1.0 - alpha))
            }
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => {
                let half = 0.5 * eps;
                let inner = adaptive_simpson(
                    |v| (-lambda * v.powf(1.0 / (1.0 - alpha))).exp(),
                    0.0,
                    half.powf(1.0 - alpha),
                    1e-13,
                )
                .map_err(|e| Error::Quadrature(format!("small_mean inner: {e}")))?
                    / (1.0 - alpha);
                let outer =
                    adaptive_simpson(|u| u.powf(-alpha) * (-lambda * u).exp(), half, eps, 1e-13)
                        .map_err(|e| Error::Quadrature(format!("small_mean outer: {e}")))?;
                Ok(scale * (inner + outer))
            }
        }
    }

    /// `nu((u0, inf))`: jump mass beyond `u0 > 0`.
    pub fn tail_mass(&self, u0: f64) -> Result<f64> {
        assert!(u0 > 0.0);
        match *self {
            JumpFamily::Zero => Ok(0.0),
            JumpFamily::Stable { alpha, scale } => Ok(scale * u0.powf(-alpha) / alpha),
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => {
                // exp(-lambda u) makes the integrand negligible past ~60/lambda
                let hi = u0 + 60.0 / lambda;
                let v = adaptive_simpson(
                    |u| u.powf(-1.0 - alpha) * (-lambda * u).exp(),
                    u0,
                    hi,
                    1e-14,
                )?;
                Ok(scale * v)
            }
        }
    }

    /// Whether `int_{u>1} e^{pu} nu(du) < inf`.
    pub fn has_exponential_moment(&self, p: f64) -> bool {
        match *self {
            JumpFamily::Zero => true,
            JumpFamily::Stable { .. } => false,
            JumpFamily::TemperedStable { lambda, .. } => p < lambda,
        }
    }

    /// Exact draw of the jump part of the increment over a cell of length `h`.
    fn sample_increment<R: Rng>(&self, h: f64, cap: u64, rng: &mut R) -> Result<f64> {
        match *self {
            JumpFamily::Zero => Ok(0.0),
            JumpFamily::Stable { alpha, scale } => {
                Ok(stable_time_scale(alpha, scale, h) * sample_standard_stable(alpha, rng))
            }
            JumpFamily::TemperedStable {
                alpha,
                scale,
                lambda,
            } => {
                let a = stable_time_scale(alpha, scale, h);
                for _ in 0..cap {
                    let x = a * sample_standard_stable(alpha, rng);
                    let u: f64 = rng.random();
                    if u <= (-lambda * x).exp() {
                        return Ok(x);
                    }
                }
                Err(Error::RejectionCap {
                    lambda,
                    cell_len: h,
                    cap,
                })
            }
        }
    }
}

/// Scale `a` such that `a * S_std` has Laplace transform
/// `exp(-h * scale * Gamma(1-alpha)/alpha * z^alpha)`.
fn stable_time_scale(alpha: f64, scale: f64, h: f64) -> f64 {
    (h * scale * libm::tgamma(1.0 - alpha) / alpha).powf(1.0 / alpha)
}

#[inline]
fn clamp_open01(u: f64) -> f64 {
    u.clamp(1e-12, 1.0 - 1e-12)
}

/// Kanter's exact sampler for the standard one-sided stable law with
/// `E exp(-z S) = exp(-z^alpha)`, `alpha` in (0,1).
pub fn sample_standard_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    let u = clamp_open01(rng.random::<f64>()) * PI;
    let w: f64 = rng.sample(Exp1);
    let s1 = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let s2 = ((1.0 - alpha) * u).sin() / w;
    s1 * s2.powf((1.0 - alpha) / alpha)
}

/// Specification of the d-dimensional clock `S_t`: deterministic drift plus
/// independent per-component jump families.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorSpec {
    pub drift: Vec<f64>,
    pub components: Vec<JumpFamily>,
    pub rejection_cap: u64,
}

impl SubordinatorSpec {
    pub fn new(drift: Vec<f64>, components: Vec<JumpFamily>) -> Result<Self> {
        if drift.len() != components.len() {
            return Err(Error::Invalid(format!(
                "drift has {} entries but {} components were given",
                drift.len(),
                components.len()
            )));
        }
        if drift.is_empty() {
            return Err(Error::Invalid(
                "subordinator needs at least one component".into(),
            ));
        }
        if let Some(th) = drift.iter().find(|&&t| !(t >= 0.0)) {
            return Err(Error::Invalid(format!(
                "drift entries must be >= 0, got {th}"
            )));
        }
        for c in &components {
            c.validate()?;
        }
        Ok(SubordinatorSpec {
            drift,
            components,
            rejection_cap: DEFAULT_REJECTION_CAP,
        })
    }

    /// Pure drift clock `S_t = theta * t` (Brownian motion with variance
    /// `theta_i` per component once subordinated).
    pub fn pure_drift(drift: Vec<f64>) -> Result<Self> {
        let n = drift.len();
        Self::new(drift, vec![JumpFamily::Zero; n])
    }

    /// Same jump family with zero drift in every component.
    pub fn iid(dim: usize, family: JumpFamily) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![family; dim])
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn has_jumps(&self) -> bool {
        self.components
            .iter()
            .any(|c| !matches!(c, JumpFamily::Zero))
    }

    /// Laplace exponent `psi(z)` with `E exp(-z . S_t) = exp(-t psi(z))`,
    /// for componentwise nonnegative `z`.
    pub fn laplace_exponent(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::Invalid(format!(
                "laplace_exponent: z has {} entries, spec has {} components",
                z.len(),
                self.dim()
            )));
        }
        if let Some(bad) = z.iter().find(|&&zi| !(zi >= 0.0)) {
            return Err(Error::Domain(format!(
                "laplace_exponent needs z >= 0, got {bad}"
            )));
        }
        let mut acc = 0.0;
        for i in 0..self.dim() {
            acc += self.drift[i] * z[i] + self.components[i].laplace_exponent(z[i]);
        }
        Ok(acc)
    }

    /// Small-jump rate `phi(eps) = min_i (theta_i + (1/e) int_{u <= eps} u nu_i(du))`.
    pub fn phi(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("phi needs eps > 0, got {eps}")));
        }
        let mut best = f64::INFINITY;
        for i in 0..self.dim() {
            let truncated = self.components[i]
                .small_mean(eps)
                .map_err(|e| Error::Quadrature(format!("phi component {i}: {e}")))?;
            best = best.min(self.drift[i] + truncated / E);
        }
        Ok(best)
    }

    /// Largest `theta` in (0, 1] with `lim_{eps -> 0} eps^{theta-1} phi(eps) > 0`,
    /// or `None` when no such exponent exists (some component has neither
    /// drift nor jumps, so `phi` vanishes identically).
    pub fn theta_index(&self) -> Option<f64> {
        let mut theta: f64 = 1.0;
        for i in 0..self.dim() {
            let ti = if self.drift[i] > 0.0 {
                1.0
            } else {
                self.components[i].small_index()?
            };
            theta = theta.min(ti);
        }
        Some(theta)
    }

    /// Whether `int_{|u|>1} e^{p|u|} nu(du) < inf`, i.e. `E e^{p S_t} < inf`.
    pub fn exp_moment_predicate(&self, p: f64) -> bool {
        assert!(p > 0.0, "exp_moment_predicate needs p > 0");
        self.components.iter().all(|c| c.has_exponential_moment(p))
    }
}

/// A realized set of clock increments over a time grid. Row `n` of `deltas`
/// holds the componentwise increments over `(grid[n], grid[n+1]]`.
#[derive(Debug, Clone)]
pub struct SubordinatorIncrements {
    pub grid: Vec<f64>,
    pub deltas: DMatrix<f64>,
}

impl SubordinatorIncrements {
    pub fn dim(&self) -> usize {
        self.deltas.ncols()
    }

    pub fn n_cells(&self) -> usize {
        self.deltas.nrows()
    }

    /// `S_{t_n}` as the prefix sum of increments, `n = 0..=n_cells`.
    pub fn cumulative(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.n_cells() + 1);
        let mut acc = DVector::zeros(d);
        out.push(acc.clone());
        for n in 0..self.n_cells() {
            for i in 0..d {
                acc[i] += self.deltas[(n, i)];
            }
            out.push(acc.clone());
        }
        out
    }

    pub fn terminal(&self) -> DVector<f64> {
        let d = self.dim();
        let mut acc = DVector::zeros(d);
        for n in 0..self.n_cells() {
            for i in 0..d {
                acc[i] += self.deltas[(n, i)];
            }
        }
        acc
    }

    /// Merge every `factor` consecutive cells. Increment sums are exact, so
    /// the coarse path is a realization of the same clock on the thin grid.
    pub fn coarsen(&self, factor: usize) -> Result<SubordinatorIncrements> {
        if factor == 0 || self.n_cells() % factor != 0 {
            return Err(Error::Invalid(format!(
                "coarsen: {} cells not divisible by {factor}",
                self.n_cells()
            )));
        }
        let n = self.n_cells() / factor;
        let d = self.dim();
        let mut deltas = DMatrix::zeros(n, d);
        for m in 0..n {
            for k in 0..factor {
                for i in 0..d {
                    deltas[(m, i)] += self.deltas[(m * factor + k, i)];
                }
            }
        }
        let grid = (0..=n).map(|m| self.grid[m * factor]).collect();
        Ok(SubordinatorIncrements { grid, deltas })
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Invalid("grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::Invalid(format!(
            "grid must start at 0, got {}",
            grid[0]
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Sample the clock increments over a strictly increasing grid starting at 0.
/// Increments over disjoint cells are independent; each is drawn exactly from
/// the marginal of the component over the cell length.
pub fn sample_increments<R: Rng>(
    spec: &SubordinatorSpec,
    grid: &[f64],
    rng: &mut R,
) -> Result<SubordinatorIncrements> {
    validate_grid(grid)?;
    let d = spec.dim();
    let n = grid.len() - 1;
    let mut deltas = DMatrix::zeros(n, d);
    for cell in 0..n {
        let h = grid[cell + 1] - grid[cell];
        for i in 0..d {
            let jump = spec.components[i].sample_increment(h, spec.rejection_cap, rng)?;
            deltas[(cell, i)] = spec.drift[i] * h + jump;
        }
    }
    Ok(SubordinatorIncrements {
        grid: grid.to_vec(),
        deltas,
    })
}
