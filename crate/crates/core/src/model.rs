//! SDE model specifications: drift with analytic derivatives, a constant
//! diffusion matrix, a Lyapunov function, and sampled checkers for the
//! standing hypotheses that the probe suite relies on.
//!
//! The state is always the flat vector of the general equation
//! `dX = b(X) dt + A dL`; for kinetic models the phase-space split `(x, v)`
//! is a view (`phase_dim`), not a separate type. Models supply analytic
//! derivatives; finite differences appear only as test oracles, because the
//! Jacobian flow consumes `grad b` at every step and must not compound
//! finite-difference error.

use crate::error::{Error, Result};
use crate::rng::aux_stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Second derivative of the drift: one Hessian matrix per drift component.
pub type TensorField = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Constants entering the standing hypotheses. `growth[m]` is the pair
/// `(coefficient, exponent)` bounding `|grad^m b| <= coeff (H^q + 1)`.
#[derive(Debug, Clone)]
pub struct HypothesisConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
    pub kappa6: f64,
    pub growth: Vec<(f64, f64)>,
}

/// Immutable model description; safe to share read-only across workers.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    /// `Some(p)` when the state is a phase-space pair `(x, v)` with `dim = 2p`.
    pub phase_dim: Option<usize>,
    drift: VectorField,
    drift_jacobian: MatrixField,
    drift_hessian: TensorField,
    pub diffusion: DMatrix<f64>,
    lyapunov: ScalarField,
    lyapunov_grad: VectorField,
    lyapunov_hess: MatrixField,
    pub constants: HypothesisConstants,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("phase_dim", &self.phase_dim)
            .finish()
    }
}

#[allow(clippy::too_many_arguments)]
impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        phase_dim: Option<usize>,
        drift: VectorField,
        drift_jacobian: MatrixField,
        drift_hessian: TensorField,
        diffusion: DMatrix<f64>,
        lyapunov: ScalarField,
        lyapunov_grad: VectorField,
        lyapunov_hess: MatrixField,
        constants: HypothesisConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("model dimension must be positive".into()));
        }
        if diffusion.nrows() != dim || diffusion.ncols() != dim {
            return Err(Error::Invalid(format!(
                "diffusion must be {dim}x{dim}, got {}x{}",
                diffusion.nrows(),
                diffusion.ncols()
            )));
        }
        if let Some(p) = phase_dim {
            if 2 * p != dim {
                return Err(Error::Invalid(format!(
                    "phase_dim {p} incompatible with dim {dim}"
                )));
            }
        }
        if let Some(&(_, q1)) = constants.growth.get(1) {
            if !(0.0..=0.5).contains(&q1) {
                return Err(Error::Invalid(format!("q_1 = {q1} must lie in [0, 1/2]")));
            }
        }
        Ok(ModelSpec {
            name: name.into(),
            dim,
            phase_dim,
            drift,
            drift_jacobian,
            drift_hessian,
            diffusion,
            lyapunov,
            lyapunov_grad,
            lyapunov_hess,
            constants,
        })
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.drift_jacobian)(x)
    }

    pub fn drift_hessian(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.drift_hessian)(x)
    }

    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        (self.lyapunov)(x)
    }

    pub fn lyapunov_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.lyapunov_grad)(x)
    }

    pub fn lyapunov_hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.lyapunov_hess)(x)
    }

    /// Columns of `A` that actually carry noise (nonzero columns), i.e. the
    /// active components of the driving process.
    pub fn active_noise_columns(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|&k| self.diffusion.column(k).iter().any(|&a| a != 0.0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// `V(x) = |x|^2 / 2`: linear drift, the damped oscillator.
    Quadratic,
    /// `V(x) = |x|^4`: cubic-growth drift.
    Quartic,
}

fn kinetic_diffusion(p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(
        2 * p,
        2 * p,
        |i, j| if i == j && i >= p { 1.0 } else { 0.0 },
    )
}

/// Stochastic Hamiltonian system on phase space: `dx = v dt`,
/// `dv = (-grad V(x) - v) dt + dL`, with `H(x, v) = |v|^2/2 + V(x)`.
pub fn builtin_kinetic_model(kind: PotentialKind, phase_dim: usize) -> ModelSpec {
    assert!(phase_dim >= 1, "phase_dim must be >= 1");
    let p = phase_dim;
    let dim = 2 * p;

    let grad_v = move |x: &DVector<f64>| -> DVector<f64> {
        let pos = x.rows(0, p).into_owned();
        match kind {
            PotentialKind::Quadratic => pos,
            PotentialKind::Quartic => &pos * (4.0 * pos.norm_squared()),
        }
    };
    let hess_v = move |x: &DVector<f64>| -> DMatrix<f64> {
        let pos = x.rows(0, p).into_owned();
        match kind {
            PotentialKind::Quadratic => DMatrix::identity(p, p),
            PotentialKind::Quartic => {
                let r2 = pos.norm_squared();
                DMatrix::identity(p, p) * (4.0 * r2) + (&pos * pos.transpose()) * 8.0
            }
        }
    };

    let drift: VectorField = Arc::new(move |x: &DVector<f64>| {
        let mut out = DVector::zeros(dim);
        let gv = grad_v(x);
        for m in 0..p {
            out[m] = x[p + m];
            out[p + m] = -gv[m] - x[p + m];
        }
        out
    });

    let drift_jacobian: MatrixField = Arc::new(move |x: &DVector<f64>| {
        let mut jac = DMatrix::zeros(dim, dim);
        let hv = hess_v(x);
        for m in 0..p {
            jac[(m, p + m)] = 1.0;
            jac[(p + m, p + m)] = -1.0;
            for j in 0..p {
                jac[(p + m, j)] = -hv[(m, j)];
            }
        }
        jac
    });

    let drift_hessian: TensorField = Arc::new(move |x: &DVector<f64>| {
        let mut hs = vec![DMatrix::zeros(dim, dim); dim];
        if kind == PotentialKind::Quartic {
            let pos = x.rows(0, p).into_owned();
            for m in 0..p {
                // grad^2 of b_{p+m} = -d_j d_k d_m V = -8 (d_{mj} x_k + d_{mk} x_j + d_{jk} x_m)
                for j in 0..p {
                    for k in 0..p {
                        let mut v = 0.0;
                        if m == j {
                            v += pos[k];
                        }
                        if m == k {
                            v += pos[j];
                        }
                        if j == k {
                            v += pos[m];
                        }
                        hs[p + m][(j, k)] = -8.0 * v;
                    }
                }
            }
        }
        hs
    });

    let lyapunov: ScalarField = Arc::new(move |x: &DVector<f64>| {
        let pos = x.rows(0, p).into_owned();
        let vel = x.rows(p, p).into_owned();
        let pot = match kind {
            PotentialKind::Quadratic => 0.5 * pos.norm_squared(),
            PotentialKind::Quartic => pos.norm_squared().powi(2),
        };
        0.5 * vel.norm_squared() + pot
    });
    let lyapunov_grad: VectorField = Arc::new(move |x: &DVector<f64>| {
        let mut g = DVector::zeros(dim);
        let gv = grad_v(x);
        for m in 0..p {
            g[m] = gv[m];
            g[p + m] = x[p + m];
        }
        g
    });
    let lyapunov_hess: MatrixField = Arc::new(move |x: &DVector<f64>| {
        let mut h = DMatrix::zeros(dim, dim);
        let hv = hess_v(x);
        for m in 0..p {
            h[(p + m, p + m)] = 1.0;
            for j in 0..p {
                h[(m, j)] = hv[(m, j)];
            }
        }
        h
    });

    let pf = p as f64;
    let kappa6 = (3.0 - 5f64.sqrt()) / 2.0;
    let constants = match kind {
        PotentialKind::Quadratic => HypothesisConstants {
            c1: 2.0,
            c2: pf.sqrt() + 1e-9,
            c3: 0.0,
            c4: (2.0 * pf).sqrt() + 1e-9,
            c5: 1.0,
            kappa1: 0.0,
            kappa2: 2.0,
            kappa3: 1.0,
            kappa4: 1.0,
            kappa5: 1.0,
            kappa6,
            growth: vec![
                (4.0, 0.5),
                ((3.0 * pf).sqrt() + 1.0, 0.0),
                (1.0, 0.0),
                (1.0, 0.0),
            ],
        },
        PotentialKind::Quartic => HypothesisConstants {
            c1: 2.0,
            c2: pf.sqrt() + 1e-9,
            c3: 0.0,
            c4: (2.0 * pf).sqrt() + 1e-9,
            c5: 1.0,
            kappa1: 0.0,
            kappa2: 2.0,
            kappa3: 1.0,
            kappa4: 1.0,
            kappa5: 1.0,
            kappa6,
            growth: vec![
                (8.0, 0.75),
                (8.0 + 6.0 * pf.sqrt(), 0.5),
                (32.0 * pf.sqrt(), 0.25),
                (24.0 * pf + 1.0, 0.0),
            ],
        },
    };

    let name = match kind {
        PotentialKind::Quadratic => format!("kinetic_quadratic_p{p}"),
        PotentialKind::Quartic => format!("kinetic_quartic_p{p}"),
    };
    ModelSpec::new(
        name,
        dim,
        Some(p),
        drift,
        drift_jacobian,
        drift_hessian,
        kinetic_diffusion(p),
        lyapunov,
        lyapunov_grad,
        lyapunov_hess,
        constants,
    )
    .expect("builtin kinetic model is well formed")
}

/// Driftless model with full noise: `dX = dL`, `H = |x|^2/2`. The fully
/// non-degenerate reference case where every probe has a closed-form oracle.
pub fn free_model(dim: usize) -> ModelSpec {
    assert!(dim >= 1);
    let constants = HypothesisConstants {
        c1: 2.0,
        c2: 1.0,
        c3: 0.0,
        c4: 1.0,
        c5: 1.0,
        kappa1: 0.0,
        kappa2: 2.0,
        kappa3: 1.0,
        kappa4: 1.0,
        kappa5: 1.0,
        kappa6: 1.0,
        growth: vec![(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)],
    };
    ModelSpec::new(
        format!("free_d{dim}"),
        dim,
        None,
        Arc::new(move |_x: &DVector<f64>| DVector::zeros(dim)),
        Arc::new(move |_x: &DVector<f64>| DMatrix::zeros(dim, dim)),
        Arc::new(move |_x: &DVector<f64>| vec![DMatrix::zeros(dim, dim); dim]),
        DMatrix::identity(dim, dim),
        Arc::new(|x: &DVector<f64>| 0.5 * x.norm_squared()),
        Arc::new(|x: &DVector<f64>| x.clone()),
        Arc::new(move |_x: &DVector<f64>| DMatrix::identity(dim, dim)),
        constants,
    )
    .expect("free model is well formed")
}

/// Kinetic system whose position equation ignores the velocity (`b_1 = 0`).
/// This breaks the drift-noise coupling, so the Malliavin covariance is
/// singular for all time; the probes must flag it.
pub fn degenerate_kinetic_model(phase_dim: usize) -> ModelSpec {
    let p = phase_dim;
    let dim = 2 * p;
    let base = builtin_kinetic_model(PotentialKind::Quadratic, p);
    let constants = base.constants.clone();
    ModelSpec::new(
        format!("kinetic_degenerate_p{p}"),
        dim,
        Some(p),
        Arc::new(move |x: &DVector<f64>| {
            let mut out = DVector::zeros(dim);
            for m in 0..p {
                out[p + m] = -x[m] - x[p + m];
            }
            out
        }),
        Arc::new(move |_x: &DVector<f64>| {
            let mut jac = DMatrix::zeros(dim, dim);
            for m in 0..p {
                jac[(p + m, m)] = -1.0;
                jac[(p + m, p + m)] = -1.0;
            }
            jac
        }),
        Arc::new(move |_x: &DVector<f64>| vec![DMatrix::zeros(dim, dim); dim]),
        kinetic_diffusion(p),
        Arc::new(|x: &DVector<f64>| 0.5 * x.norm_squared()),
        Arc::new(|x: &DVector<f64>| x.clone()),
        Arc::new(move |_x: &DVector<f64>| DMatrix::identity(dim, dim)),
        constants,
    )
    .expect("degenerate kinetic model is well formed")
}

/// First- and second-order Taylor defects of the drift Jacobian along a
/// noise-space displacement:
/// `(|(grad b(x+Ay) - grad b(x)) A|, |(grad b(x+Ay) - grad b(x) - Ay . grad^2 b(x)) A|)`
/// in Frobenius norm.
pub fn eval_drift_taylor_defect(
    spec: &ModelSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> (f64, f64) {
    let a = &spec.diffusion;
    let ay = a * y;
    let shifted = x + &ay;
    let j0 = spec.drift_jacobian(x);
    let j1 = spec.drift_jacobian(&shifted);
    let diff = &j1 - &j0;
    let first = (&diff * a).norm();
    let hess = spec.drift_hessian(x);
    let mut directional = DMatrix::zeros(spec.dim, spec.dim);
    for (i, h) in hess.iter().enumerate() {
        let row = h * &ay;
        for j in 0..spec.dim {
            directional[(i, j)] = row[j];
        }
    }
    let second = ((diff - directional) * a).norm();
    (first, second)
}

/// One checked hypothesis: worst margin (`LHS - RHS`, nonpositive passes)
/// with the witnessing sample point.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub id: &'static str,
    pub applicable: bool,
    pub margin: f64,
    pub witness: Option<DVector<f64>>,
    pub pass: bool,
    /// Empirical supremum for conditions whose constant is reported rather
    /// than asserted (the Lipschitz/Taylor ratios).
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub conditions: Vec<ConditionReport>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.conditions
            .iter()
            .filter(|c| c.applicable)
            .all(|c| c.pass)
    }

    pub fn get(&self, id: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.id == id)
    }
}

const MARGIN_TOL: f64 = 1e-9;

/// Deterministic unit-vector mesh with at least `32 * dim` directions:
/// the coordinate axes plus a fixed-seed Gaussian spray, normalized.
pub fn direction_mesh(dim: usize) -> Vec<DVector<f64>> {
    let mut mesh = Vec::with_capacity(34 * dim);
    for i in 0..dim {
        let mut e = DVector::zeros(dim);
        e[i] = 1.0;
        mesh.push(e.clone());
        mesh.push(-e);
    }
    let mut rng = aux_stream(0xD1CE, 0);
    while mesh.len() < 32 * dim + 2 * dim {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-8 {
            mesh.push(v / n);
        }
    }
    mesh
}

/// Deterministic sample cloud: the `[-1, 1]^dim` cube corners (for dim <= 5)
/// plus a fixed-seed Gaussian cloud scaled by `spread`.
pub fn default_cloud(dim: usize, extra: usize, spread: f64) -> Vec<DVector<f64>> {
    let mut cloud = Vec::new();
    if dim <= 5 {
        for mask in 0..(1usize << dim) {
            cloud.push(DVector::from_fn(dim, |i, _| {
                if mask >> i & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }));
        }
    }
    let mut rng = aux_stream(0xC10D, 1);
    for _ in 0..extra {
        cloud.push(DVector::from_fn(dim, |_, _| {
            spread * rng.sample::<f64, _>(StandardNormal)
        }));
    }
    cloud
}

/// Evaluate the standing hypotheses on a sample cloud. Violations are data,
/// not panics: each condition reports its worst margin and witness.
pub fn check_hypotheses(
    spec: &ModelSpec,
    cloud: &[DVector<f64>],
    radius_grid: &[f64],
) -> Result<HypothesisReport> {
    if cloud.is_empty() {
        return Err(Error::Invalid(
            "check_hypotheses needs a nonempty cloud".into(),
        ));
    }
    let k = &spec.constants;
    let mesh = direction_mesh(spec.dim);
    let mut conditions = Vec::new();

    let mut track = |id: &'static str,
                     applicable: bool,
                     worst: Option<(f64, DVector<f64>)>,
                     estimate: Option<f64>| {
        let (margin, witness) = match worst {
            Some((m, w)) => (m, Some(w)),
            None => (f64::NEG_INFINITY, None),
        };
        conditions.push(ConditionReport {
            id,
            applicable,
            margin,
            witness,
            pass: !applicable || margin <= MARGIN_TOL,
            estimate,
        });
    };

    // Worst of `f` over the cloud, as (margin, witness).
    let cloud_worst = |f: &dyn Fn(&DVector<f64>) -> f64| -> Option<(f64, DVector<f64>)> {
        cloud
            .iter()
            .map(|x| (f(x), x.clone()))
            .max_by(|a, b| a.0.total_cmp(&b.0))
    };

    // Lyapunov sign and coercivity along rays.
    track(
        "lyapunov_nonneg",
        true,
        cloud_worst(&|x| -spec.lyapunov(x)),
        None,
    );
    if radius_grid.len() >= 2 {
        let mut worst: Option<(f64, DVector<f64>)> = None;
        for u in &mesh {
            for w in radius_grid.windows(2) {
                let drop = spec.lyapunov(&(u * w[0])) - spec.lyapunov(&(u * w[1]));
                let pt = u * w[1];
                if worst.as_ref().is_none_or(|b| drop > b.0) {
                    worst = Some((drop, pt));
                }
            }
        }
        track("lyapunov_coercive", true, worst, None);
    }

    // Lyapunov dissipativity and the noise-direction bounds on grad H and
    // grad^2 H with the kappa constants.
    track(
        "drift_dissipativity",
        true,
        cloud_worst(&|x| spec.drift(x).dot(&spec.lyapunov_grad(x)) - k.kappa1 * spec.lyapunov(x)),
        None,
    );
    let a = spec.diffusion.clone();
    track(
        "noise_gradient_bound",
        true,
        cloud_worst(&|x| {
            let g = spec.lyapunov_grad(x);
            let h = spec.lyapunov(x);
            (0..spec.dim)
                .map(|kk| {
                    let s: f64 = (0..spec.dim).map(|i| g[i] * a[(i, kk)]).sum();
                    s * s - k.kappa2 * h
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }),
        None,
    );
    track(
        "noise_hessian_bound",
        true,
        cloud_worst(&|x| {
            let hh = spec.lyapunov_hess(x);
            (0..spec.dim)
                .map(|kk| {
                    let col = a.column(kk);
                    let mut s = 0.0;
                    for i in 0..spec.dim {
                        for j in 0..spec.dim {
                            s += hh[(i, j)] * col[i] * col[j];
                        }
                    }
                    s - k.kappa3
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }),
        None,
    );

    // Polynomial growth of |grad^m b| against H^{q_m}.
    let growth_ids: [&'static str; 3] = ["growth_drift", "growth_jacobian", "growth_hessian"];
    for m in 0..3usize {
        let Some(&(coeff, q)) = k.growth.get(m) else {
            continue;
        };
        track(
            growth_ids[m],
            true,
            cloud_worst(&|x| {
                let mag = match m {
                    0 => spec.drift(x).norm(),
                    1 => spec.drift_jacobian(x).norm(),
                    _ => spec
                        .drift_hessian(x)
                        .iter()
                        .map(|h| h.norm_squared())
                        .sum::<f64>()
                        .sqrt(),
                };
                mag - coeff * (spec.lyapunov(x).powf(q) + 1.0)
            }),
            None,
        );
    }

    // The same dissipativity inequality with the kinetic constant C3.
    track(
        "kinetic_dissipativity",
        true,
        cloud_worst(&|x| spec.drift(x).dot(&spec.lyapunov_grad(x)) - k.c3 * spec.lyapunov(x)),
        None,
    );

    // Kinetic-only conditions need the (x, v) view.
    let kinetic = spec.phase_dim;
    if let Some(p) = kinetic {
        track(
            "velocity_gradient_bound",
            true,
            cloud_worst(&|x| {
                let g = spec.lyapunov_grad(x);
                let gv = g.rows(p, p).norm_squared();
                gv - k.c1 * spec.lyapunov(x)
            }),
            None,
        );
        track(
            "velocity_hessian_bound",
            true,
            cloud_worst(&|x| {
                let hh = spec.lyapunov_hess(x);
                let vv = hh.view((p, p), (p, p)).into_owned();
                vv.norm() - k.c2
            }),
            None,
        );
        // Velocity-derivative bound with the orders the model description
        // carries (grad_v b and grad_v^2 b; higher v-derivatives vanish
        // identically for every builtin).
        track(
            "velocity_derivative_bound",
            true,
            cloud_worst(&|x| {
                let j = spec.drift_jacobian(x);
                let dv = j.view((0, p), (2 * p, p)).norm();
                let hs = spec.drift_hessian(x);
                let mut d2: f64 = 0.0;
                for h in &hs {
                    d2 += h.view((p, p), (p, p)).norm_squared();
                }
                dv + d2.sqrt() - k.c4
            }),
            None,
        );
        // Drift-noise coupling: |u grad_v b_1|^2 >= C5 |u|^2 over the mesh.
        let mut worst: Option<(f64, DVector<f64>)> = None;
        for x in cloud {
            let j = spec.drift_jacobian(x);
            let dvb1 = j.view((0, p), (p, p)).into_owned();
            for u in direction_mesh(p) {
                let lhs = (u.transpose() * &dvb1).norm_squared();
                let margin = k.c5 * u.norm_squared() - lhs;
                if worst.as_ref().is_none_or(|b| margin > b.0) {
                    worst = Some((margin, x.clone()));
                }
            }
        }
        track("velocity_coupling", true, worst, None);
    } else {
        for id in [
            "velocity_gradient_bound",
            "velocity_hessian_bound",
            "velocity_derivative_bound",
            "velocity_coupling",
        ] {
            track(id, false, None, None);
        }
    }

    // Joint nondegeneracy: |uA|^2 + |u grad b A|^2 >= kappa6 over the mesh.
    let mut worst: Option<(f64, DVector<f64>)> = None;
    for x in cloud {
        let j = spec.drift_jacobian(x);
        for u in &mesh {
            let ua = (u.transpose() * &a).norm_squared();
            let uja = (u.transpose() * &j * &a).norm_squared();
            let margin = k.kappa6 - (ua + uja);
            if worst.as_ref().is_none_or(|b| margin > b.0) {
                worst = Some((margin, x.clone()));
            }
        }
    }
    track("joint_nondegeneracy", true, worst, None);

    // Taylor defects of the drift Jacobian over a ball mesh of
    // displacements. No sharp constants exist for the concrete potentials,
    // so alongside the margins we report the empirical suprema of the
    // ratios.
    let mut worst1: Option<(f64, DVector<f64>)> = None;
    let mut worst2: Option<(f64, DVector<f64>)> = None;
    let mut sup1: f64 = 0.0;
    let mut sup2: f64 = 0.0;
    let ball_dirs = direction_mesh(spec.dim);
    for x in cloud {
        for u in ball_dirs.iter().step_by(4) {
            for r in [0.1, 0.5, 1.0, 2.0] {
                let y = u * r;
                let (d1, d2) = eval_drift_taylor_defect(spec, x, &y);
                sup1 = sup1.max(d1 / r.min(1.0));
                sup2 = sup2.max(d2 / (r * r));
                let m1 = d1 - k.kappa4 * r.min(1.0);
                let m2 = d2 - k.kappa5 * r * r;
                if worst1.as_ref().is_none_or(|b| m1 > b.0) {
                    worst1 = Some((m1, x.clone()));
                }
                if worst2.as_ref().is_none_or(|b| m2 > b.0) {
                    worst2 = Some((m2, x.clone()));
                }
            }
        }
    }
    track("jacobian_lipschitz", true, worst1, Some(sup1));
    track("jacobian_taylor", true, worst2, Some(sup2));

    Ok(HypothesisReport { conditions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn quadratic_kinetic_pointwise_values() {
        let m = builtin_kinetic_model(PotentialKind::Quadratic, 1);
        let b = m.drift(&vecd(&[1.0, 0.0]));
        assert_eq!(b, vecd(&[0.0, -1.0]));
        // H = v^2/2 + x^2/2
        assert_eq!(m.lyapunov(&vecd(&[1.0, 0.0])), 0.5);
        assert_eq!(m.lyapunov(&vecd(&[1.0, 1.0])), 1.0);
    }

    #[test]
    fn quartic_kinetic_pointwise_values() {
        let m = builtin_kinetic_model(PotentialKind::Quartic, 1);
        let b = m.drift(&vecd(&[0.0, 2.0]));
        assert_eq!(b, vecd(&[2.0, -2.0])); // grad V(0) = 0
    }

    #[test]
    fn quartic_hessian_of_potential() {
        // phase_dim 2: grad^2 V at x = (1, 0) is [[12, 0], [0, 4]], visible as
        // the negated lower-left block of the drift Jacobian.
        let m = builtin_kinetic_model(PotentialKind::Quartic, 2);
        let x = vecd(&[1.0, 0.0, 0.3, -0.7]);
        let j = m.drift_jacobian(&x);
        let hv = -j.view((2, 0), (2, 2)).into_owned();
        let expect = DMatrix::from_row_slice(2, 2, &[12.0, 0.0, 0.0, 4.0]);
        assert!((hv - expect).norm() < 1e-12);
    }

    /// Central finite differences of the drift are the oracle for the
    /// analytic Jacobian, and differences of the Jacobian for the Hessian.
    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let h = 1e-5;
        for m in [
            builtin_kinetic_model(PotentialKind::Quadratic, 2),
            builtin_kinetic_model(PotentialKind::Quartic, 2),
            degenerate_kinetic_model(1),
        ] {
            let cloud = default_cloud(m.dim, 100, 1.5);
            for x in &cloud {
                let jac = m.drift_jacobian(x);
                let scale = 1.0 + jac.norm();
                for j in 0..m.dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (m.drift(&xp) - m.drift(&xm)) / (2.0 * h);
                    for i in 0..m.dim {
                        assert!(
                            (fd[i] - jac[(i, j)]).abs() <= 1e-6 * scale,
                            "{}: dJ[{i},{j}] at {x:?}",
                            m.name
                        );
                    }
                }
                let hess = m.drift_hessian(x);
                let hscale = 1.0 + hess.iter().map(|h| h.norm()).fold(0.0, f64::max);
                for kdir in 0..m.dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[kdir] += h;
                    xm[kdir] -= h;
                    let fd = (m.drift_jacobian(&xp) - m.drift_jacobian(&xm)) / (2.0 * h);
                    for i in 0..m.dim {
                        for j in 0..m.dim {
                            assert!(
                                (fd[(i, j)] - hess[i][(j, kdir)]).abs() <= 1e-6 * hscale,
                                "{}: dH[{i}][{j},{kdir}]",
                                m.name
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quartic_dissipativity_identity() {
        // b . grad H = -|v|^2 exactly for the kinetic builtins.
        let m = builtin_kinetic_model(PotentialKind::Quartic, 2);
        for x in default_cloud(4, 50, 2.0) {
            let v2 = x.rows(2, 2).norm_squared();
            let lhs = m.drift(&x).dot(&m.lyapunov_grad(&x));
            assert!((lhs + v2).abs() < 1e-10 * (1.0 + v2), "{lhs} vs {}", -v2);
        }
    }

    #[test]
    fn hypotheses_pass_for_builtin_models() {
        let radii = [0.5, 1.0, 2.0, 4.0, 8.0];
        for m in [
            builtin_kinetic_model(PotentialKind::Quadratic, 1),
            builtin_kinetic_model(PotentialKind::Quartic, 1),
            builtin_kinetic_model(PotentialKind::Quartic, 2),
            free_model(2),
        ] {
            let cloud = default_cloud(m.dim, 60, 1.5);
            let rep = check_hypotheses(&m, &cloud, &radii).unwrap();
            for c in &rep.conditions {
                assert!(
                    c.pass,
                    "{}: condition {} fails with margin {}",
                    m.name, c.id, c.margin
                );
            }
        }
    }

    #[test]
    fn coupling_condition_fails_for_degenerate_model() {
        let m = degenerate_kinetic_model(1);
        let cloud = default_cloud(2, 20, 1.0);
        let rep = check_hypotheses(&m, &cloud, &[1.0, 2.0]).unwrap();
        let c = rep.get("velocity_coupling").unwrap();
        assert!(
            c.applicable && !c.pass,
            "velocity_coupling should fail: margin {}",
            c.margin
        );
        assert!(!rep.all_pass());
    }

    #[test]
    fn quadratic_coupling_margin_is_exact() {
        // grad_v b_1 = I, so |u grad_v b_1|^2 = |u|^2 and the C5 = 1 margin
        // sits at zero exactly.
        let m = builtin_kinetic_model(PotentialKind::Quadratic, 2);
        let cloud = default_cloud(4, 0, 1.0); // cube corners
        let rep = check_hypotheses(&m, &cloud, &[1.0, 2.0]).unwrap();
        let c = rep.get("velocity_coupling").unwrap();
        assert!(c.pass && c.margin.abs() < 1e-12, "margin {}", c.margin);
    }

    #[test]
    fn taylor_defects_vanish_for_builtin_kinetics() {
        // A projects onto the velocity block and grad b varies only with
        // position, so both defects vanish identically.
        for kind in [PotentialKind::Quadratic, PotentialKind::Quartic] {
            let m = builtin_kinetic_model(kind, 2);
            for x in default_cloud(4, 10, 1.0) {
                for y in default_cloud(4, 5, 0.5) {
                    let (d1, d2) = eval_drift_taylor_defect(&m, &x, &y);
                    assert!(d1 == 0.0 && d2 == 0.0, "({d1}, {d2})");
                }
            }
        }
    }

    #[test]
    fn taylor_defects_scalar_polynomial() {
        // b(x) = x^2, A = 1, x = 1, y = 0.1: first defect |2(1.1) - 2| = 0.2,
        // second defect |0.2 - 0.1 * 2| = 0.
        let m = ModelSpec::new(
            "scalar_square",
            1,
            None,
            Arc::new(|x: &DVector<f64>| DVector::from_row_slice(&[x[0] * x[0]])),
            Arc::new(|x: &DVector<f64>| DMatrix::from_row_slice(1, 1, &[2.0 * x[0]])),
            Arc::new(|_x: &DVector<f64>| vec![DMatrix::from_row_slice(1, 1, &[2.0])]),
            DMatrix::identity(1, 1),
            Arc::new(|x: &DVector<f64>| 0.5 * x[0] * x[0]),
            Arc::new(|x: &DVector<f64>| x.clone()),
            Arc::new(|_x: &DVector<f64>| DMatrix::identity(1, 1)),
            HypothesisConstants {
                c1: 2.0,
                c2: 1.0,
                c3: 2.0,
                c4: 10.0,
                c5: 1.0,
                kappa1: 2.0,
                kappa2: 2.0,
                kappa3: 1.0,
                kappa4: 1.0,
                kappa5: 1.0,
                kappa6: 1.0,
                growth: vec![(2.0, 1.0), (2.0, 0.5)],
            },
        )
        .unwrap();
        let (d1, d2) = eval_drift_taylor_defect(&m, &vecd(&[1.0]), &vecd(&[0.1]));
        assert!((d1 - 0.2).abs() < 1e-12, "{d1}");
        assert!(d2.abs() < 1e-12, "{d2}");
    }

    #[test]
    fn q1_outside_half_is_rejected() {
        let m = builtin_kinetic_model(PotentialKind::Quartic, 1);
        let mut constants = m.constants.clone();
        constants.growth[1].1 = 0.8;
        let err = ModelSpec::new(
            "bad",
            2,
            Some(1),
            m.drift.clone(),
            m.drift_jacobian.clone(),
            m.drift_hessian.clone(),
            m.diffusion.clone(),
            m.lyapunov.clone(),
            m.lyapunov_grad.clone(),
            m.lyapunov_hess.clone(),
            constants,
        );
        assert!(err.is_err());
    }

    #[test]
    fn direction_mesh_size_and_norms() {
        let mesh = direction_mesh(3);
        assert!(mesh.len() >= 32 * 3);
        for u in &mesh {
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }
}
