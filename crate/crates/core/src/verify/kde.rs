//! Product-Gaussian kernel density estimation over ensemble terminal states.
//!
//! Bandwidth selection is the per-coordinate rule of thumb on the
//! interquartile range, which keeps heavy-tailed samples from blowing the
//! bandwidth up; a degenerate spread in some coordinate trips a floor and is
//! flagged rather than silently producing a delta spike.

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;
use nalgebra::DVector;

/// Regular evaluation grid in lexicographic order (first coordinate slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if mins.len() != maxs.len() || mins.len() != counts.len() || mins.is_empty() {
            return Err(Error::Invalid(
                "grid spec arrays must share a nonzero length".into(),
            ));
        }
        for i in 0..mins.len() {
            if !(maxs[i] >= mins[i]) || counts[i] < 1 {
                return Err(Error::Invalid(format!("bad grid axis {i}")));
            }
            if counts[i] == 1 && maxs[i] != mins[i] {
                return Err(Error::Invalid(format!(
                    "axis {i}: single point needs min == max"
                )));
            }
        }
        Ok(GridSpec { mins, maxs, counts })
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_value(&self, axis: usize, idx: usize) -> f64 {
        if self.counts[axis] == 1 {
            self.mins[axis]
        } else {
            self.mins[axis]
                + (self.maxs[axis] - self.mins[axis]) * idx as f64 / (self.counts[axis] - 1) as f64
        }
    }

    /// All grid points, first coordinate slowest.
    pub fn points(&self) -> Vec<DVector<f64>> {
        let d = self.dim();
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            out.push(DVector::from_fn(d, |i, _| self.axis_value(i, idx[i])));
            for axis in (0..d).rev() {
                idx[axis] += 1;
                if idx[axis] < self.counts[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        out
    }

    /// Riemann cell volume (trapezoid-free; grid spacing product).
    pub fn cell_volume(&self) -> f64 {
        let mut v = 1.0;
        for i in 0..self.dim() {
            if self.counts[i] > 1 {
                v *= (self.maxs[i] - self.mins[i]) / (self.counts[i] - 1) as f64;
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub enum Bandwidth {
    /// Per-coordinate rule of thumb on the interquartile range.
    Auto,
    Given(Vec<f64>),
}

/// A kernel density estimate evaluated on a set of points.
#[derive(Debug, Clone)]
pub struct DensityEstimate {
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub n_paths: usize,
    /// Present when the points came from a regular grid, enabling the
    /// normalization check.
    pub grid: Option<GridSpec>,
    pub bandwidth_floored: bool,
}

impl DensityEstimate {
    /// Riemann sum of the estimate over its grid; `None` without a grid.
    pub fn normalization(&self) -> Option<f64> {
        let grid = self.grid.as_ref()?;
        Some(self.values.iter().sum::<f64>() * grid.cell_volume())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Rule-of-thumb bandwidths: `sigma_j (4 / ((d+2) n))^{1/(d+4)}` with the
/// robust spread `sigma_j = IQR_j / 1.349`.
pub fn auto_bandwidth(samples: &[DVector<f64>]) -> (Vec<f64>, bool) {
    let n = samples.len();
    let d = samples[0].len();
    let rate = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    let mut bw = Vec::with_capacity(d);
    let mut floored = false;
    let mut coord = vec![0.0; n];
    for j in 0..d {
        for (i, s) in samples.iter().enumerate() {
            coord[i] = s[j];
        }
        coord.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&coord, 0.75) - quantile_sorted(&coord, 0.25);
        let mut b = iqr / 1.349 * rate;
        if !(b > BANDWIDTH_FLOOR) {
            b = BANDWIDTH_FLOOR;
            floored = true;
        }
        bw.push(b);
    }
    (bw, floored)
}

/// Evaluate the product-Gaussian KDE of `samples` at `points`.
pub fn kde_at_points(
    samples: &[DVector<f64>],
    points: Vec<DVector<f64>>,
    bandwidth: &Bandwidth,
    workers: usize,
) -> Result<DensityEstimate> {
    if samples.len() < 1000 {
        return Err(Error::Invalid(format!(
            "kde needs at least 1000 completed paths, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    let (bw, floored) = match bandwidth {
        Bandwidth::Auto => auto_bandwidth(samples),
        Bandwidth::Given(b) => {
            if b.len() != d || b.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Invalid(
                    "bandwidth must be positive per coordinate".into(),
                ));
            }
            (b.clone(), false)
        }
    };
    let norm: f64 = bw
        .iter()
        .map(|b| 1.0 / (b * (2.0 * std::f64::consts::PI).sqrt()))
        .product::<f64>()
        / samples.len() as f64;
    let inv2: Vec<f64> = bw.iter().map(|b| 0.5 / (b * b)).collect();

    let eval_one = |y: &DVector<f64>| -> f64 {
        let mut acc = 0.0;
        for s in samples {
            let mut e = 0.0;
            for j in 0..d {
                let dx = y[j] - s[j];
                e += dx * dx * inv2[j];
            }
            acc += (-e).exp();
        }
        acc * norm
    };

    let values = crate::verify::parallel_map(points.len(), workers, &|i| eval_one(&points[i]));
    Ok(DensityEstimate {
        points,
        values,
        bandwidth: bw,
        n_paths: samples.len(),
        grid: None,
        bandwidth_floored: floored,
    })
}

/// Evaluate over a regular grid (enables the normalization invariant).
pub fn kde_on_grid(
    samples: &[DVector<f64>],
    grid: GridSpec,
    bandwidth: &Bandwidth,
    workers: usize,
) -> Result<DensityEstimate> {
    let mut est = kde_at_points(samples, grid.points(), bandwidth, workers)?;
    est.grid = Some(grid);
    Ok(est)
}

/// Density of an ensemble's terminal law on a regular grid.
pub fn kde_density(
    result: &crate::verify::EnsembleResult,
    grid: GridSpec,
    bandwidth: &Bandwidth,
) -> Result<DensityEstimate> {
    let workers = crate::verify::resolve_workers(None);
    kde_on_grid(&result.terminal, grid, bandwidth, workers)
}

/// Grid covering the sample bulk padded by `pad_bandwidths` bandwidths.
pub fn padded_grid(
    samples: &[DVector<f64>],
    bandwidth: &[f64],
    pad_bandwidths: f64,
    counts_per_axis: usize,
) -> Result<GridSpec> {
    let d = samples[0].len();
    let n = samples.len();
    let mut mins = Vec::with_capacity(d);
    let mut maxs = Vec::with_capacity(d);
    let mut coord = vec![0.0; n];
    for j in 0..d {
        for (i, s) in samples.iter().enumerate() {
            coord[i] = s[j];
        }
        coord.sort_by(f64::total_cmp);
        // clip the extreme 0.1% so a single wild jump does not stretch the box
        let lo = quantile_sorted(&coord, 0.001);
        let hi = quantile_sorted(&coord, 0.999);
        mins.push(lo - pad_bandwidths * bandwidth[j]);
        maxs.push(hi + pad_bandwidths * bandwidth[j]);
    }
    GridSpec::new(mins, maxs, vec![counts_per_axis; d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::aux_stream;
    use crate::stats::normal_pdf;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_samples(n: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = aux_stream(seed, 7);
        (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn grid_points_are_lexicographic() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![2, 3]).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], DVector::from_row_slice(&[0.0, 0.0]));
        assert_eq!(pts[1], DVector::from_row_slice(&[0.0, 1.0]));
        assert_eq!(pts[2], DVector::from_row_slice(&[0.0, 2.0]));
        assert_eq!(pts[3], DVector::from_row_slice(&[1.0, 0.0]));
    }

    #[test]
    fn kde_matches_gaussian_density_at_mode() {
        let samples = gaussian_samples(40_000, 1, 1);
        let grid = GridSpec::new(vec![0.0], vec![0.0], vec![1]).unwrap();
        let est = kde_on_grid(&samples, grid, &Bandwidth::Auto, 1).unwrap();
        let exact = normal_pdf(0.0, 0.0, 1.0);
        assert!(
            (est.values[0] - exact).abs() < 0.1 * exact,
            "{} vs {exact}",
            est.values[0]
        );
    }

    #[test]
    fn kde_normalizes_over_padded_box() {
        let samples = gaussian_samples(5_000, 2, 2);
        let (bw, floored) = auto_bandwidth(&samples);
        assert!(!floored);
        let grid = padded_grid(&samples, &bw, 6.0, 41).unwrap();
        let est = kde_on_grid(&samples, grid, &Bandwidth::Auto, 2).unwrap();
        let z = est.normalization().unwrap();
        assert!((0.95..=1.02).contains(&z), "normalization {z}");
        assert!(est.all_finite());
    }

    #[test]
    fn degenerate_coordinate_trips_the_floor() {
        let mut samples = gaussian_samples(2_000, 2, 3);
        for s in &mut samples {
            s[1] = 4.0;
        }
        let (bw, floored) = auto_bandwidth(&samples);
        assert!(floored);
        assert_eq!(bw[1], BANDWIDTH_FLOOR);
    }

    #[test]
    fn symmetric_dynamics_give_symmetric_estimates() {
        // b odd in the state and x0 = 0: the terminal law is symmetric, so
        // the estimates at y and -y agree within bootstrap error
        use crate::model::{builtin_kinetic_model, PotentialKind};
        use crate::subordinator::{JumpFamily, SubordinatorSpec};
        use crate::verify::{ensemble_run, EnsembleOpts};
        let model = builtin_kinetic_model(PotentialKind::Quadratic, 1);
        let sub = SubordinatorSpec::new(
            vec![0.0, 0.0],
            vec![JumpFamily::Zero, JumpFamily::tempered_unit(0.5, 1.0)],
        )
        .unwrap();
        let res = ensemble_run(
            &model,
            &sub,
            &nalgebra::DVector::zeros(2),
            &EnsembleOpts::new(0.5, 5e-3, 10_000, 21),
        )
        .unwrap();
        let y = nalgebra::DVector::from_row_slice(&[0.4, -0.3]);
        let points = vec![y.clone(), -y];
        let (bw, _) = auto_bandwidth(&res.terminal);
        let est = kde_at_points(
            &res.terminal,
            points.clone(),
            &Bandwidth::Given(bw.clone()),
            1,
        )
        .unwrap();
        // bootstrap over path resamples
        let mut rng = aux_stream(22, 0);
        let mut diffs = Vec::new();
        for _ in 0..60 {
            let resample: Vec<nalgebra::DVector<f64>> = (0..res.terminal.len())
                .map(|_| res.terminal[rng.random_range(0..res.terminal.len())].clone())
                .collect();
            let e =
                kde_at_points(&resample, points.clone(), &Bandwidth::Given(bw.clone()), 1).unwrap();
            diffs.push(e.values[0] - e.values[1]);
        }
        let (_, se) = crate::stats::mean_se(&diffs);
        let boot_sd = se * (diffs.len() as f64).sqrt();
        let gap = (est.values[0] - est.values[1]).abs();
        assert!(gap <= 3.0 * boot_sd, "gap {gap} vs bootstrap sd {boot_sd}");
    }

    #[test]
    fn worker_count_does_not_change_values() {
        let samples = gaussian_samples(2_000, 2, 4);
        let grid = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![7, 7]).unwrap();
        let a = kde_on_grid(&samples, grid.clone(), &Bandwidth::Auto, 1).unwrap();
        let b = kde_on_grid(&samples, grid, &Bandwidth::Auto, 4).unwrap();
        assert_eq!(a.values, b.values);
    }
}
