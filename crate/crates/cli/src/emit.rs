//! Bit-stable result emission: fixed 17-significant-digit decimal formatting
//! so identical runs produce byte-identical files.

use levyflow::verify::{DensityEstimate, ProbeReport};
use std::io::Write;
use std::path::Path;

/// Canonical float formatting used in every CSV cell.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)
}

/// Density grid CSV: `coord_1,...,coord_dim,density`, rows in the estimate's
/// (lexicographic) point order.
pub fn emit_density_grid(estimate: &DensityEstimate, path: &Path) -> std::io::Result<()> {
    let dim = estimate.points.first().map_or(0, |p| p.len());
    let mut s = String::new();
    for i in 1..=dim {
        s.push_str(&format!("coord_{i},"));
    }
    s.push_str("density\n");
    for (p, v) in estimate.points.iter().zip(&estimate.values) {
        for c in p.iter() {
            s.push_str(&fmt_float(*c));
            s.push(',');
        }
        s.push_str(&fmt_float(*v));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

/// Per-probe CSV: one row per checked item.
pub fn probe_csv(report: &ProbeReport) -> String {
    let mut s = String::from("label,estimate,uncertainty,threshold,verdict\n");
    for item in &report.items {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            item.label.replace(',', ";"),
            fmt_float(item.estimate),
            fmt_float(item.uncertainty),
            fmt_float(item.threshold),
            item.verdict.as_str()
        ));
    }
    s
}

/// Machine-readable summary across probes.
pub fn summary_csv(reports: &[ProbeReport]) -> String {
    let mut s = String::from("probe,label,estimate,uncertainty,threshold,verdict\n");
    for r in reports {
        for item in &r.items {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.id,
                item.label.replace(',', ";"),
                fmt_float(item.estimate),
                fmt_float(item.uncertainty),
                fmt_float(item.threshold),
                item.verdict.as_str()
            ));
        }
        s.push_str(&format!("{},OVERALL,,,,{}\n", r.id, r.verdict().as_str()));
    }
    s
}

/// Run manifest: canonical config echo plus provenance fields.
pub fn manifest(cfg: &crate::config::ExperimentConfig, workers: usize) -> String {
    let mut s = String::new();
    s.push_str("# levyflow run manifest\n");
    s.push_str(&format!("config_hash = {}\n", cfg.hash()));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("workers = {workers}\n"));
    s.push_str("rng = chacha8; per-path streams 4i (clock) and 4i+1 (noise)\n");
    s.push_str("# canonical config echo\n");
    s.push_str(&cfg.emit());
    s
}
