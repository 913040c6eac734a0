//! Pathwise Malliavin covariance from the flow formula, plus the time-change
//! and Parseval utilities that serve as its independent oracles.
//!
//! The covariance of the terminal state factors through the flows:
//! `Sigma_t = J_t C_t J_t^*` with the reduced matrix
//! `C_t = sum_k int_0^t (K_s a_k)(K_s a_k)^* dS^k_s`. The inverse flow `K` is
//! driven by `ds` alone, so the integrand is continuous (`K_{s-} = K_s`) and
//! the Stieltjes cells can be integrated by the trapezoidal rule without any
//! anticipativity concern; this keeps constant integrands exact while cutting
//! the quadrature constant of the left-point rule in half an order.
//!
//! `time_change_integral` and `parseval_covariance_oracle` compute both sides
//! of the underlying change-of-variables and Parseval identities by separate
//! routes, so the covariance assembly can be checked against a truncated
//! Cameron-Martin expansion instead of against itself.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sde::Trajectory;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Determinants below this floor count as degenerate for reciprocal statistics.
pub const DET_FLOOR: f64 = 1e-300;

// ---------------------------------------------------------------------------
// step functions and cadlag time paths
// ---------------------------------------------------------------------------

/// Left-continuous scalar step function: `f(s) = values[i]` on
/// `(breakpoints[i], breakpoints[i+1]]`, with `f(0) = values[0]`.
/// This is the predictable-integrand convention used everywhere in the crate.
#[derive(Debug, Clone)]
pub struct StepFunction {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::Invalid(format!(
                "step function needs {} breakpoints for {} values",
                values.len() + 1,
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "step function breakpoints must increase".into(),
            ));
        }
        Ok(StepFunction {
            breakpoints,
            values,
        })
    }

    pub fn constant(value: f64, t: f64) -> Self {
        StepFunction {
            breakpoints: vec![0.0, t],
            values: vec![value],
        }
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.breakpoints[0] {
            return self.values[0];
        }
        // first breakpoint >= s bounds the piece (t_i, t_{i+1}] containing s
        match self.breakpoints.binary_search_by(|b| b.total_cmp(&s)) {
            Ok(idx) => self.values[idx.saturating_sub(1).min(self.values.len() - 1)],
            Err(idx) => self.values[(idx - 1).min(self.values.len() - 1)],
        }
    }
}

/// Vector-valued step function with shared breakpoints.
#[derive(Debug, Clone)]
pub struct VectorStepFunction {
    pub breakpoints: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl VectorStepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::Invalid("vector step function size mismatch".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid(
                "vector step breakpoints must increase".into(),
            ));
        }
        Ok(VectorStepFunction {
            breakpoints,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn component(&self, k: usize) -> StepFunction {
        StepFunction {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v[k]).collect(),
        }
    }
}

/// Cadlag nondecreasing time change: piecewise linear between breakpoints,
/// with an optional upward jump at each breakpoint. `left[i]` is the limit
/// from below at `times[i]`, `right[i]` the value at `times[i]`.
#[derive(Debug, Clone)]
pub struct TimePath {
    pub times: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl TimePath {
    pub fn new(times: Vec<f64>, left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        if times.len() != left.len() || times.len() != right.len() || times.is_empty() {
            return Err(Error::Invalid(
                "time path arrays must share a nonzero length".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("time path times must increase".into()));
        }
        if left[0] != right[0] {
            return Err(Error::Invalid("time path cannot jump at its start".into()));
        }
        for i in 0..times.len() {
            if right[i] < left[i] || (i > 0 && left[i] < right[i - 1]) {
                return Err(Error::Invalid("time path must be nondecreasing".into()));
            }
        }
        Ok(TimePath { times, left, right })
    }

    /// The identity time change on `[0, t]`.
    pub fn identity(t: f64) -> Self {
        TimePath {
            times: vec![0.0, t],
            left: vec![0.0, t],
            right: vec![0.0, t],
        }
    }

    /// Continuous linear clock `s -> rate * s` on `[0, t]`.
    pub fn linear(rate: f64, t: f64) -> Self {
        TimePath {
            times: vec![0.0, t],
            left: vec![0.0, rate * t],
            right: vec![0.0, rate * t],
        }
    }

    /// Pure-jump path carried by a grid: constant between grid points, with
    /// the increment of `cumulative` absorbed at each grid time.
    pub fn pure_jump(grid: &[f64], cumulative: &[f64]) -> Result<Self> {
        if grid.len() != cumulative.len() {
            return Err(Error::Invalid("pure_jump needs matching arrays".into()));
        }
        let mut left = Vec::with_capacity(grid.len());
        let mut right = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            left.push(if i == 0 {
                cumulative[0]
            } else {
                cumulative[i - 1]
            });
            right.push(cumulative[i]);
        }
        TimePath::new(grid.to_vec(), left, right)
    }

    /// Component `k` of realized subordinator increments as a pure-jump path.
    pub fn from_subordinator(sub: &crate::subordinator::SubordinatorIncrements, k: usize) -> Self {
        let cum: Vec<f64> = sub.cumulative().iter().map(|v| v[k]).collect();
        TimePath::pure_jump(&sub.grid, &cum).expect("subordinator increments are monotone")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Value at `s` (right-continuous).
    pub fn value(&self, s: f64) -> f64 {
        let m = self.times.len();
        if s <= self.times[0] {
            return self.right[0];
        }
        if s >= self.times[m - 1] {
            return self.right[m - 1];
        }
        let i = match self.times.binary_search_by(|x| x.total_cmp(&s)) {
            Ok(idx) => return self.right[idx],
            Err(idx) => idx - 1,
        };
        let w = (s - self.times[i]) / (self.times[i + 1] - self.times[i]);
        self.right[i] + w * (self.left[i + 1] - self.right[i])
    }

    /// Generalized right-continuous inverse `inf { r >= 0 : value(r) > s }`,
    /// clamped to the final time when the path never exceeds `s`.
    pub fn inverse(&self, s: f64) -> f64 {
        let m = self.times.len();
        if self.right[0] > s {
            return self.times[0];
        }
        for i in 0..m - 1 {
            // linear run on [times[i], times[i+1]) from right[i] to left[i+1]
            if self.left[i + 1] > s {
                let slope =
                    (self.left[i + 1] - self.right[i]) / (self.times[i + 1] - self.times[i]);
                return self.times[i] + (s - self.right[i]) / slope;
            }
            if self.right[i + 1] > s {
                return self.times[i + 1];
            }
        }
        self.times[m - 1]
    }
}

// ---------------------------------------------------------------------------
// time-change identity
// ---------------------------------------------------------------------------

fn merged_partition(points: impl IntoIterator<Item = f64>, t: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = points.into_iter().filter(|&x| x >= 0.0 && x <= t).collect();
    pts.push(0.0);
    pts.push(t);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * t.max(1.0));
    pts
}

/// Both sides of the change-of-variables identity
/// `int_0^t f_s d h(ell_s) = int_0^{ell_t} f(ell^{-1}_s) h'(s) ds`.
///
/// The left side is an exact Stieltjes sum over the merged breakpoints of
/// `f` and `ell`; the right side is quadrature of the derivative against the
/// generalized inverse, a genuinely different route. `h` must be absolutely
/// continuous with derivative `h_dot`.
pub fn time_change_integral(
    f: &StepFunction,
    h: &dyn Fn(f64) -> f64,
    h_dot: &dyn Fn(f64) -> f64,
    ell: &TimePath,
    t: f64,
) -> Result<(f64, f64)> {
    if t <= 0.0 || t > f.end() + 1e-12 || t > ell.end_time() + 1e-12 {
        return Err(Error::Invalid(format!(
            "time_change_integral: bad horizon t = {t}"
        )));
    }
    // LHS over (a, b] pieces: f is constant on each, h(ell(.)) picks up
    // linear runs and the jump at b.
    let pts = merged_partition(
        f.breakpoints
            .iter()
            .copied()
            .chain(ell.times.iter().copied()),
        t,
    );
    let mut lhs = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        lhs += f.eval(b) * (h(ell.value(b)) - h(ell.value(a)));
    }

    // RHS on [0, ell_t]: f(ell^{-1}(s)) is a step function of s whose
    // breakpoints are images of breakpoints; integrate h_dot per piece.
    let ell_t = ell.value(t);
    let mut spts: Vec<f64> = Vec::new();
    for bp in f.breakpoints.iter().chain(ell.times.iter()) {
        if *bp <= t {
            spts.push(ell.value(*bp));
        }
    }
    for i in 0..ell.times.len() {
        if ell.times[i] <= t {
            spts.push(ell.left[i]);
            spts.push(ell.right[i]);
        }
    }
    let spts = {
        let mut v: Vec<f64> = spts
            .into_iter()
            .filter(|&s| s >= 0.0 && s <= ell_t)
            .collect();
        v.push(0.0);
        v.push(ell_t);
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * ell_t.max(1.0));
        v
    };
    let mut rhs = 0.0;
    for w in spts.windows(2) {
        let (sa, sb) = (w[0], w[1]);
        if sb <= sa {
            continue;
        }
        let r = ell.inverse(0.5 * (sa + sb));
        let val = f.eval(r);
        rhs += val * crate::quad::gl_integrate(h_dot, sa, sb, 16);
    }
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// Parseval oracle
// ---------------------------------------------------------------------------

/// Antiderivative of a scalar Haar function on `[0, len]`.
#[derive(Debug, Clone, Copy)]
enum HaarShape {
    Constant,
    Wavelet { level: u32, pos: u32 },
}

#[derive(Debug, Clone, Copy)]
struct HaarFn {
    shape: HaarShape,
    len: f64,
}

impl HaarFn {
    /// `Phi(x) = int_0^x phi`, the tent antiderivative.
    fn anti(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.len);
        match self.shape {
            HaarShape::Constant => x / self.len.sqrt(),
            HaarShape::Wavelet { level, pos } => {
                let cells = (1u64 << level) as f64;
                let a0 = self.len * pos as f64 / cells;
                let a1 = self.len * (pos as f64 + 0.5) / cells;
                let a2 = self.len * (pos as f64 + 1.0) / cells;
                let amp = (cells / self.len).sqrt();
                if x <= a0 {
                    0.0
                } else if x <= a1 {
                    amp * (x - a0)
                } else if x <= a2 {
                    amp * (a2 - x)
                } else {
                    0.0
                }
            }
        }
    }
}

fn haar_basis(len: f64, levels: usize) -> Vec<HaarFn> {
    let mut fns = vec![HaarFn {
        shape: HaarShape::Constant,
        len,
    }];
    for level in 0..levels as u32 {
        for pos in 0..(1u32 << level) {
            fns.push(HaarFn {
                shape: HaarShape::Wavelet { level, pos },
                len,
            });
        }
    }
    fns
}

/// Exact Stieltjes sum `int_0^t f_s d g(ell_s)` for step `f` and piecewise
/// path `ell`, with `g` evaluated exactly.
fn stieltjes_against(f: &StepFunction, g: &dyn Fn(f64) -> f64, ell: &TimePath, t: f64) -> f64 {
    let pts = merged_partition(
        f.breakpoints
            .iter()
            .copied()
            .chain(ell.times.iter().copied()),
        t,
    );
    let mut acc = 0.0;
    for w in pts.windows(2) {
        acc += f.eval(w[1]) * (g(ell.value(w[1])) - g(ell.value(w[0])));
    }
    acc
}

/// Both sides of the Parseval identity
/// `sum_n (int f . dh^n_ell)(int g . dh^n_ell) = sum_k int f^k g^k d ell^k`,
/// with the left side truncated to a Haar Cameron-Martin basis of
/// `2^levels` functions per component. The right side is the exact direct
/// Stieltjes sum; the truncation error of the left side halves (or better)
/// per added level for step integrands.
pub fn parseval_covariance_oracle(
    f: &VectorStepFunction,
    g: &VectorStepFunction,
    ell: &[TimePath],
    t: f64,
    levels: usize,
) -> Result<(f64, f64)> {
    let d = f.dim();
    if g.dim() != d || ell.len() != d {
        return Err(Error::Invalid("parseval oracle: dimension mismatch".into()));
    }
    // RHS: exact
    let mut rhs = 0.0;
    for k in 0..d {
        let fk = f.component(k);
        let gk = g.component(k);
        let pts = merged_partition(
            fk.breakpoints
                .iter()
                .copied()
                .chain(gk.breakpoints.iter().copied())
                .chain(ell[k].times.iter().copied()),
            t,
        );
        for w in pts.windows(2) {
            rhs += fk.eval(w[1]) * gk.eval(w[1]) * (ell[k].value(w[1]) - ell[k].value(w[0]));
        }
    }
    // LHS: truncated basis expansion, one scalar Haar family per component
    // on [0, max_k ell^k_t].
    let len = ell.iter().map(|e| e.value(t)).fold(0.0f64, f64::max);
    if len == 0.0 {
        return Ok((0.0, rhs));
    }
    let basis = haar_basis(len, levels);
    let mut lhs = 0.0;
    for k in 0..d {
        let fk = f.component(k);
        let gk = g.component(k);
        for hf in &basis {
            let cf = stieltjes_against(&fk, &|x| hf.anti(x), &ell[k], t);
            let cg = stieltjes_against(&gk, &|x| hf.anti(x), &ell[k], t);
            lhs += cf * cg;
        }
    }
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// covariance assembly
// ---------------------------------------------------------------------------

/// Malliavin covariance of a terminal state, with spectral diagnostics.
#[derive(Debug, Clone)]
pub struct CovarianceRecord {
    /// `Sigma_t = J_t C_t J_t^*`.
    pub sigma: DMatrix<f64>,
    /// Reduced matrix `C_t = sum_k int (K a_k)(K a_k)^* dS^k`.
    pub reduced: DMatrix<f64>,
    /// `det Sigma_t` (from the eigenvalues; tiny negatives are round-off).
    pub det: f64,
    /// Smallest eigenvalue of `Sigma_t`.
    pub min_eig: f64,
    /// Smallest eigenvalue of the reduced matrix: the quadratic-form infimum
    /// `xi_t = inf_{|u|=1} sum_k int |u K a_k|^2 dS^k`.
    pub xi: f64,
    /// Whether `det` fell below [`DET_FLOOR`].
    pub degenerate: bool,
}

impl CovarianceRecord {
    /// Determinant clamped at the floor, for reciprocal statistics.
    pub fn det_clamped(&self) -> f64 {
        self.det.max(DET_FLOOR)
    }
}

/// Streaming accumulator for the reduced matrix; ensemble code feeds it one
/// step at a time so trajectories never need to be materialized.
pub struct CovarianceAccumulator {
    reduced: DMatrix<f64>,
    columns: Vec<(usize, DVector<f64>)>,
}

impl CovarianceAccumulator {
    pub fn new(model: &ModelSpec) -> Self {
        let columns = model
            .active_noise_columns()
            .into_iter()
            .map(|k| (k, model.diffusion.column(k).into_owned()))
            .collect();
        CovarianceAccumulator {
            reduced: DMatrix::zeros(model.dim, model.dim),
            columns,
        }
    }

    /// Add one cell: trapezoidal average of the outer products at the cell
    /// ends against the clock increments `ds` over the cell. Exact whenever
    /// `K` is constant across the cell.
    pub fn add_step(
        &mut self,
        k_start: &DMatrix<f64>,
        k_end: &DMatrix<f64>,
        ds: impl Fn(usize) -> f64,
    ) {
        for (k, a_col) in &self.columns {
            let dsk = ds(*k);
            if dsk == 0.0 {
                continue;
            }
            let v0 = k_start * a_col;
            let v1 = k_end * a_col;
            let n = v0.len();
            for i in 0..n {
                for j in 0..n {
                    self.reduced[(i, j)] += 0.5 * dsk * (v0[i] * v0[j] + v1[i] * v1[j]);
                }
            }
        }
    }

    pub fn finish(self, j_matrix: &DMatrix<f64>) -> Result<CovarianceRecord> {
        let reduced = symmetrize(self.reduced);
        let sigma = symmetrize(j_matrix * &reduced * j_matrix.transpose());
        let eig_sigma = SymmetricEigen::try_new(sigma.clone(), 1e-14, 1000).ok_or(Error::Eigen)?;
        let eig_reduced =
            SymmetricEigen::try_new(reduced.clone(), 1e-14, 1000).ok_or(Error::Eigen)?;
        let det: f64 = eig_sigma.eigenvalues.iter().product();
        let min_eig = eig_sigma
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let xi = eig_reduced
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        Ok(CovarianceRecord {
            sigma,
            reduced,
            det,
            min_eig,
            xi,
            degenerate: det < DET_FLOOR,
        })
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Assemble the covariance record of a materialized trajectory.
pub fn covariance_matrix(model: &ModelSpec, traj: &Trajectory) -> Result<CovarianceRecord> {
    let mut acc = CovarianceAccumulator::new(model);
    for n in 0..traj.noise.n_cells() {
        acc.add_step(
            &traj.inverse_jacobian[n],
            &traj.inverse_jacobian[n + 1],
            |k| traj.noise.ds[(n, k)],
        );
    }
    acc.finish(traj.jacobian.last().expect("nonempty trajectory"))
}
