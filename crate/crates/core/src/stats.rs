//! Sample statistics used by the probe suite.

use rand::Rng;

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "mean_se needs at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Quantile of a sorted slice with linear interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Median of block means over `n_blocks` contiguous blocks, in sample order.
/// Robust location estimate for heavy-tailed positives such as reciprocal
/// determinants; deterministic given the sample order.
pub fn median_of_means(xs: &[f64], n_blocks: usize) -> f64 {
    assert!(n_blocks >= 1 && xs.len() >= n_blocks);
    let block = xs.len() / n_blocks;
    let mut means: Vec<f64> = (0..n_blocks)
        .map(|b| {
            let lo = b * block;
            let hi = if b + 1 == n_blocks {
                xs.len()
            } else {
                lo + block
            };
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    quantile_sorted(&means, 0.5)
}

/// Ordinary least squares line fit.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn ols_line(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|xi| (xi - mx) * (xi - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = y.iter().map(|yi| (yi - my) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    LineFit {
        slope,
        intercept,
        r2,
    }
}

/// Bootstrap standard error of a quantile estimate.
pub fn bootstrap_quantile_se<R: Rng>(xs: &[f64], q: f64, resamples: usize, rng: &mut R) -> f64 {
    assert!(xs.len() >= 2 && resamples >= 2);
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; xs.len()];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = xs[rng.random_range(0..xs.len())];
        }
        buf.sort_by(f64::total_cmp);
        stats.push(quantile_sorted(&buf, q));
    }
    let (_, se) = mean_se(&stats);
    se * (resamples as f64).sqrt() // std of the bootstrap distribution
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}
