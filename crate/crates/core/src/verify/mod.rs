//! Ensemble orchestration and the probe suite.
//!
//! Probes turn analytic statements about the dynamics into quantitative
//! checks: each returns `(estimate, uncertainty, threshold, verdict)` rows,
//! with the verdict derived from the stated inequality, never hardcoded.
//! Everything is deterministic given `(configuration, seed)`: per-path RNG
//! streams are derived by counter, and aggregation runs in path order, so
//! worker count and scheduling cannot change a single bit of the output.

pub mod generator;
pub mod kde;
pub mod probes;

pub use generator::{
    generator_apply, generator_apply_with, GeneratorQuad, GeneratorValue, JumpQuadrature,
    TestFunction,
};
pub use kde::{
    auto_bandwidth, kde_at_points, kde_on_grid, padded_grid, Bandwidth, DensityEstimate, GridSpec,
};
pub use probes::*;

use crate::error::{Error, Result};
use crate::malliavin::{CovarianceAccumulator, CovarianceRecord};
use crate::model::ModelSpec;
use crate::noise::sample_noise_path;
use crate::rng::{noise_stream, subordinator_stream};
use crate::sde::{uniform_grid, Stepper, DEFAULT_LYAPUNOV_CEILING};
use crate::subordinator::{sample_increments, SubordinatorSpec};
use nalgebra::{DMatrix, DVector};

/// Environment variable overriding the worker count for parallel ensembles.
pub const WORKERS_ENV: &str = "LEVYFLOW_WORKERS";

/// Probe outcome, ordered by severity: `Fail > Inconclusive > Pass`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    pub fn worst(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Fail => "FAIL",
        }
    }
}

/// One checked quantity inside a probe.
#[derive(Debug, Clone)]
pub struct ProbeItem {
    pub label: String,
    pub estimate: f64,
    pub uncertainty: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

impl ProbeItem {
    pub fn new(
        label: impl Into<String>,
        estimate: f64,
        uncertainty: f64,
        threshold: f64,
        verdict: Verdict,
    ) -> Self {
        ProbeItem {
            label: label.into(),
            estimate,
            uncertainty,
            threshold,
            verdict,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub id: String,
    pub items: Vec<ProbeItem>,
}

impl ProbeReport {
    pub fn new(id: impl Into<String>) -> Self {
        ProbeReport {
            id: id.into(),
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, item: ProbeItem) {
        self.items.push(item);
    }

    pub fn verdict(&self) -> Verdict {
        self.items
            .iter()
            .fold(Verdict::Pass, |acc, it| acc.worst(it.verdict))
    }
}

/// Deterministic parallel map over `0..n`: results land in index order no
/// matter how the chunks are scheduled.
pub fn parallel_map<T: Send>(n: usize, workers: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let workers = workers.max(1).min(n);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut out: Vec<Option<T>> = Vec::with_capacity(n);
    out.resize_with(n, || None);
    std::thread::scope(|scope| {
        for (w, slice) in out.chunks_mut(chunk).enumerate() {
            let base = w * chunk;
            scope.spawn(move || {
                for (off, slot) in slice.iter_mut().enumerate() {
                    *slot = Some(f(base + off));
                }
            });
        }
    });
    out.into_iter()
        .map(|x| x.expect("all chunks filled"))
        .collect()
}

/// Resolve the worker count: explicit option, then environment, then the
/// machine's parallelism.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    if let Some(w) = explicit {
        return w.max(1);
    }
    if let Ok(s) = std::env::var(WORKERS_ENV) {
        if let Ok(w) = s.trim().parse::<usize>() {
            return w.max(1);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

#[derive(Debug, Clone)]
pub struct EnsembleOpts {
    pub t: f64,
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub lyapunov_ceiling: f64,
    /// Grid times at which per-path state snapshots are recorded; must be
    /// multiples of `h`.
    pub snapshot_times: Vec<f64>,
    pub workers: Option<usize>,
}

impl EnsembleOpts {
    pub fn new(t: f64, h: f64, n_paths: usize, seed: u64) -> Self {
        EnsembleOpts {
            t,
            h,
            n_paths,
            seed,
            lyapunov_ceiling: DEFAULT_LYAPUNOV_CEILING,
            snapshot_times: Vec::new(),
            workers: None,
        }
    }
}

/// Per-path summary tracked by the streaming runner.
#[derive(Debug, Clone)]
struct PathSummary {
    terminal: DVector<f64>,
    sup_lyapunov: f64,
    sup_state_dev: f64,
    sup_j_dev: f64,
    sup_k_dev: f64,
    max_kj_defect: f64,
    covariance: CovarianceRecord,
    clock_terminal: DVector<f64>,
    snapshots: Vec<DVector<f64>>,
}

/// Ensemble output: statistics are stored for completed paths only, in path
/// order, with the aborted count disclosed alongside.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub n_paths: usize,
    pub seed: u64,
    pub t: f64,
    pub h: f64,
    pub terminal: Vec<DVector<f64>>,
    pub sup_lyapunov: Vec<f64>,
    pub sup_state_dev: Vec<f64>,
    pub sup_j_dev: Vec<f64>,
    pub sup_k_dev: Vec<f64>,
    pub max_kj_defect: Vec<f64>,
    pub covariance: Vec<CovarianceRecord>,
    pub clock_terminal: Vec<DVector<f64>>,
    /// `snapshots[s][p]` = state of completed path `p` at `snapshot_times[s]`.
    pub snapshots: Vec<Vec<DVector<f64>>>,
    pub snapshot_times: Vec<f64>,
    pub aborted: usize,
    pub aborted_paths: Vec<usize>,
}

impl EnsembleResult {
    pub fn completed(&self) -> usize {
        self.terminal.len()
    }

    pub fn degenerate_fraction(&self) -> f64 {
        if self.covariance.is_empty() {
            return 0.0;
        }
        self.covariance.iter().filter(|c| c.degenerate).count() as f64
            / self.covariance.len() as f64
    }
}

/// Run `n_paths` independent paths: clock increments, conditional noise,
/// state + flows, covariance accumulation, snapshots. Deterministic given
/// the seed; blow-ups land in the aborted count instead of failing the run.
pub fn ensemble_run(
    model: &ModelSpec,
    sub: &SubordinatorSpec,
    x0: &DVector<f64>,
    opts: &EnsembleOpts,
) -> Result<EnsembleResult> {
    if opts.n_paths == 0 {
        return Err(Error::Invalid("ensemble needs at least one path".into()));
    }
    if sub.dim() != model.dim {
        return Err(Error::Invalid(format!(
            "clock has {} components but the model needs {}",
            sub.dim(),
            model.dim
        )));
    }
    let grid = uniform_grid(opts.t, opts.h)?;
    let n_cells = grid.len() - 1;
    let mut snap_idx = Vec::with_capacity(opts.snapshot_times.len());
    for &ts in &opts.snapshot_times {
        let idx = (ts / opts.h).round() as usize;
        if idx > n_cells || (idx as f64 * opts.h - ts).abs() > 1e-9 * opts.t.max(1.0) {
            return Err(Error::Invalid(format!(
                "snapshot time {ts} is not on the grid"
            )));
        }
        snap_idx.push(idx);
    }

    let workers = resolve_workers(opts.workers);
    let runs: Vec<Result<Option<PathSummary>>> = parallel_map(opts.n_paths, workers, &|p| {
        run_single_path(
            model,
            sub,
            x0,
            &grid,
            &snap_idx,
            opts.seed,
            p as u64,
            opts.lyapunov_ceiling,
        )
    });

    let mut out = EnsembleResult {
        n_paths: opts.n_paths,
        seed: opts.seed,
        t: opts.t,
        h: opts.h,
        terminal: Vec::new(),
        sup_lyapunov: Vec::new(),
        sup_state_dev: Vec::new(),
        sup_j_dev: Vec::new(),
        sup_k_dev: Vec::new(),
        max_kj_defect: Vec::new(),
        covariance: Vec::new(),
        clock_terminal: Vec::new(),
        snapshots: vec![Vec::new(); snap_idx.len()],
        snapshot_times: opts.snapshot_times.clone(),
        aborted: 0,
        aborted_paths: Vec::new(),
    };
    for (p, run) in runs.into_iter().enumerate() {
        match run? {
            Some(s) => {
                out.terminal.push(s.terminal);
                out.sup_lyapunov.push(s.sup_lyapunov);
                out.sup_state_dev.push(s.sup_state_dev);
                out.sup_j_dev.push(s.sup_j_dev);
                out.sup_k_dev.push(s.sup_k_dev);
                out.max_kj_defect.push(s.max_kj_defect);
                out.covariance.push(s.covariance);
                out.clock_terminal.push(s.clock_terminal);
                for (si, snap) in s.snapshots.into_iter().enumerate() {
                    out.snapshots[si].push(snap);
                }
            }
            None => {
                out.aborted += 1;
                out.aborted_paths.push(p);
            }
        }
    }
    if out.terminal.is_empty() {
        return Err(Error::Invalid(format!(
            "all {} paths blew up; refine the step or lower the horizon",
            opts.n_paths
        )));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_single_path(
    model: &ModelSpec,
    sub: &SubordinatorSpec,
    x0: &DVector<f64>,
    grid: &[f64],
    snap_idx: &[usize],
    seed: u64,
    path: u64,
    ceiling: f64,
) -> Result<Option<PathSummary>> {
    let mut srng = subordinator_stream(seed, path);
    let inc = sample_increments(sub, grid, &mut srng)?;
    let mut nrng = noise_stream(seed, path);
    let noise = sample_noise_path(&inc, &mut nrng);

    let mut stepper = Stepper::new(model, x0.clone(), ceiling)?;
    let mut acc = CovarianceAccumulator::new(model);
    let id = DMatrix::<f64>::identity(model.dim, model.dim);
    let mut sup_state_dev: f64 = 0.0;
    let mut sup_j_dev: f64 = 0.0;
    let mut sup_k_dev: f64 = 0.0;
    let mut max_kj_defect: f64 = 0.0;
    let mut snapshots = vec![DVector::zeros(model.dim); snap_idx.len()];
    for (si, &idx) in snap_idx.iter().enumerate() {
        if idx == 0 {
            snapshots[si] = x0.clone();
        }
    }
    for cell in 0..noise.n_cells() {
        let h = noise.grid[cell + 1] - noise.grid[cell];
        let k_start = stepper.inverse_jacobian.clone();
        let dl = noise.dl.row(cell).transpose();
        match stepper.step(h, &dl) {
            Ok(()) => {}
            Err(Error::BlowUp { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
        acc.add_step(&k_start, &stepper.inverse_jacobian, |k| noise.ds[(cell, k)]);
        sup_state_dev = sup_state_dev.max((&stepper.state - x0).norm());
        sup_j_dev = sup_j_dev.max((&stepper.jacobian - &id).norm());
        sup_k_dev = sup_k_dev.max((&stepper.inverse_jacobian - &id).norm());
        max_kj_defect =
            max_kj_defect.max((&stepper.inverse_jacobian * &stepper.jacobian - &id).norm());
        for (si, &idx) in snap_idx.iter().enumerate() {
            if idx == cell + 1 {
                snapshots[si] = stepper.state.clone();
            }
        }
    }
    let covariance = acc.finish(&stepper.jacobian)?;
    Ok(Some(PathSummary {
        terminal: stepper.state,
        sup_lyapunov: stepper.lyapunov_sup,
        sup_state_dev,
        sup_j_dev,
        sup_k_dev,
        max_kj_defect,
        covariance,
        clock_terminal: inc.terminal(),
        snapshots,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_kinetic_model, free_model, PotentialKind};
    use crate::stats::mean_se;
    use crate::subordinator::JumpFamily;

    #[test]
    fn ensemble_is_deterministic_across_worker_counts() {
        let model = builtin_kinetic_model(PotentialKind::Quartic, 1);
        let sub = SubordinatorSpec::iid(2, JumpFamily::tempered_unit(0.5, 1.0)).unwrap();
        let x0 = DVector::from_row_slice(&[0.5, 0.0]);
        let mut o1 = EnsembleOpts::new(0.25, 1e-2, 64, 42);
        o1.workers = Some(1);
        let mut o4 = o1.clone();
        o4.workers = Some(4);
        let a = ensemble_run(&model, &sub, &x0, &o1).unwrap();
        let b = ensemble_run(&model, &sub, &x0, &o4).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.sup_lyapunov, b.sup_lyapunov);
        for (ca, cb) in a.covariance.iter().zip(&b.covariance) {
            assert_eq!(ca.sigma, cb.sigma);
            assert_eq!(ca.det, cb.det);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let model = free_model(2);
        let sub = SubordinatorSpec::iid(2, JumpFamily::stable_unit(0.5)).unwrap();
        let x0 = DVector::zeros(2);
        let opts = EnsembleOpts::new(1.0, 0.05, 1, 7);
        let a = ensemble_run(&model, &sub, &x0, &opts).unwrap();
        let b = ensemble_run(&model, &sub, &x0, &opts).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.clock_terminal, b.clock_terminal);
    }

    #[test]
    fn driftless_ensemble_mean_is_centered() {
        let model = free_model(1);
        let sub = SubordinatorSpec::iid(1, JumpFamily::tempered_unit(0.5, 1.0)).unwrap();
        let x0 = DVector::from_row_slice(&[2.0]);
        let opts = EnsembleOpts::new(1.0, 0.05, 20_000, 11);
        let res = ensemble_run(&model, &sub, &x0, &opts).unwrap();
        let firsts: Vec<f64> = res.terminal.iter().map(|x| x[0]).collect();
        let (m, se) = mean_se(&firsts);
        assert!((m - 2.0).abs() <= 4.0 * se, "{m} +- {se}");
        assert_eq!(res.aborted, 0);
    }

    #[test]
    fn linear_kinetic_mean_matches_exponential_flow() {
        let model = builtin_kinetic_model(PotentialKind::Quadratic, 1);
        let sub = SubordinatorSpec::iid(2, JumpFamily::tempered_unit(0.5, 1.0)).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, 0.0]);
        let t = 0.5;
        let opts = EnsembleOpts::new(t, 1e-3, 20_000, 13);
        let res = ensemble_run(&model, &sub, &x0, &opts).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let expect = (m * t).exp() * &x0;
        for i in 0..2 {
            let coords: Vec<f64> = res.terminal.iter().map(|x| x[i]).collect();
            let (mean, se) = mean_se(&coords);
            let tol = 3.0 * se + 10.0 * 1e-3;
            assert!(
                (mean - expect[i]).abs() <= tol,
                "coord {i}: {mean} vs {} (tol {tol})",
                expect[i]
            );
        }
    }

    #[test]
    fn snapshots_line_up_with_grid_times() {
        let model = free_model(1);
        let sub = SubordinatorSpec::pure_drift(vec![1.0]).unwrap();
        let x0 = DVector::zeros(1);
        let mut opts = EnsembleOpts::new(1.0, 0.25, 3, 5);
        opts.snapshot_times = vec![0.0, 0.5, 1.0];
        let res = ensemble_run(&model, &sub, &x0, &opts).unwrap();
        assert_eq!(res.snapshots.len(), 3);
        assert_eq!(res.snapshots[0][0], x0);
        assert_eq!(res.snapshots[2][0], res.terminal[0]);
    }

    #[test]
    fn aborted_paths_are_counted_not_dropped_silently() {
        let model = builtin_kinetic_model(PotentialKind::Quartic, 1);
        let sub = SubordinatorSpec::pure_drift(vec![0.0, 0.0]).unwrap();
        // coarse step + cubic drift from far out: most paths explode
        let x0 = DVector::from_row_slice(&[30.0, 0.0]);
        let mut opts = EnsembleOpts::new(2.0, 0.5, 8, 3);
        opts.lyapunov_ceiling = 1e9;
        match ensemble_run(&model, &sub, &x0, &opts) {
            Ok(res) => assert_eq!(res.aborted + res.completed(), 8),
            Err(Error::Invalid(msg)) => assert!(msg.contains("blew up")),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
