//! Probe registry and command implementations.

use crate::config::ExperimentConfig;
use crate::emit;
use levyflow::error::Result;
use levyflow::verify::{self, probes, Bandwidth, ProbeReport, TestFunction, Verdict};
use nalgebra::DVector;
use std::path::Path;

/// Run every enabled probe and write per-probe CSVs, the summary, the
/// manifest, and (for the density probe) the density grid. Returns the worst
/// verdict across probes.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Verdict> {
    let model = cfg.model().map_err(to_core)?;
    let sub = cfg.subordinator().map_err(to_core)?;
    let x0 = cfg.x0_vector().map_err(to_core)?;
    let workers = verify::resolve_workers(None);
    let mut reports: Vec<ProbeReport> = Vec::new();

    for probe in &cfg.probes {
        let report = match probe.as_str() {
            "transforms" => probes::transform_probe(
                &sub,
                cfg.paths.max(1000),
                &[0.5, 1.0, 1.5, 2.0, 4.0],
                cfg.seed,
            )?,
            "phi_theta" => probes::phi_theta_probe(&probes::active_clock(&model, &sub)?)?,
            "flow_consistency" => {
                probes::flow_consistency_probe(&model, &sub, &x0, cfg.t, cfg.step, 2, 10, cfg.seed)?
            }
            "covariance_oracles" => probes::covariance_oracle_probe(cfg.seed)?,
            "time_change" => probes::time_change_probe(100, cfg.seed)?,
            "generator_eigen" => {
                probes::generator_eigen_probe(&sub, &[0.5, 1.0, 1.5, 2.0, 3.0], 0.3)?
            }
            "fokker_planck" => {
                let mut fopts = probes::FokkerPlanckOpts::new(
                    cfg.t,
                    cfg.step,
                    cfg.fp_h_time,
                    cfg.paths,
                    cfg.seed,
                );
                fopts.workers = None;
                let fs = default_bumps(&x0);
                probes::fokker_planck_probe(&model, &sub, &x0, &fs, &fopts)?
            }
            "exp_moment" => {
                let base = if x0.norm() == 0.0 {
                    DVector::from_element(model.dim, 1.0 / (model.dim as f64).sqrt())
                } else {
                    x0.clone()
                };
                let x0s: Vec<DVector<f64>> = [0.6, 0.8, 1.0, 1.2, 1.4]
                    .iter()
                    .map(|s| &base * *s)
                    .collect();
                probes::exp_moment_probe(
                    &model,
                    &sub,
                    &x0s,
                    cfg.t,
                    cfg.step,
                    cfg.paths.min(10_000),
                    cfg.exp_moment_p,
                    cfg.seed,
                )?
            }
            "exp_moment_divergence" => {
                let n = cfg.paths.max(1000);
                probes::exp_moment_divergence_probe(
                    &model,
                    &sub,
                    &x0,
                    cfg.t.min(1.0),
                    cfg.step,
                    &[n / 10, n / 3, n],
                    4.0,
                    cfg.seed,
                )?
            }
            "small_deviation" => {
                let d = model.dim;
                let dir = DVector::from_element(d, 1.0 / (d as f64).sqrt());
                probes::small_deviation_probe(
                    &sub,
                    &move |_s| dir.clone(),
                    1.0,
                    cfg.step.max(0.005),
                    &[0.01, 0.05, 0.1],
                    0.9,
                    cfg.paths.min(10_000),
                    cfg.seed,
                )?
            }
            "covariance_scaling" => {
                let opts = probes::CovarianceScalingOpts {
                    n_paths: cfg.paths.min(10_000),
                    seed: cfg.seed,
                    margin: cfg.slope_margin,
                    ..Default::default()
                };
                probes::covariance_scaling_probe(&model, &sub, &x0, &opts)?
            }
            "flow_moments" => probes::flow_moment_probe(
                &model,
                &sub,
                &x0,
                2..=5,
                &[0.25, 0.5, 1.0],
                2.0,
                cfg.paths.min(4_000),
                cfg.seed,
            )?,
            "density" => {
                let mut dopts = probes::DensityProbeOpts::new(cfg.t, cfg.step, cfg.paths, cfg.seed);
                dopts.beta3_min = cfg.beta3_min;
                dopts.bandwidth = Bandwidth::Auto;
                let out = probes::density_probe(&model, &sub, &x0, &dopts)?;
                emit::emit_density_grid(&out.estimate, &out_dir.join("density_grid.csv"))
                    .map_err(io_err)?;
                out.report
            }
            "degeneracy" => probes::degeneracy_probe(
                &model,
                &sub,
                &x0,
                cfg.t.min(0.25),
                cfg.step,
                cfg.paths.min(2_000),
                cfg.seed,
            )?,
            other => {
                return Err(levyflow::Error::Invalid(format!("unknown probe '{other}'")));
            }
        };
        emit::write_file(
            &out_dir.join(format!("probe_{}.csv", report.id)),
            emit::probe_csv(&report).as_bytes(),
        )
        .map_err(io_err)?;
        reports.push(report);
    }

    emit::write_file(
        &out_dir.join("summary.csv"),
        emit::summary_csv(&reports).as_bytes(),
    )
    .map_err(io_err)?;
    emit::write_file(
        &out_dir.join("manifest.txt"),
        emit::manifest(cfg, workers).as_bytes(),
    )
    .map_err(io_err)?;

    let verdict = reports
        .iter()
        .fold(Verdict::Pass, |acc, r| acc.worst(r.verdict()));
    for r in &reports {
        println!("probe {:<22} {}", r.id, r.verdict().as_str());
    }
    println!("overall: {}", verdict.as_str());
    Ok(verdict)
}

/// Three Gaussian bumps near the start point, used as Fokker-Planck test
/// functions when the config does not say otherwise.
pub fn default_bumps(x0: &DVector<f64>) -> Vec<TestFunction> {
    let d = x0.len();
    let offset = DVector::from_element(d, 0.5 / (d as f64).sqrt());
    vec![
        TestFunction::gaussian_bump(x0.clone(), 1.0),
        TestFunction::gaussian_bump(x0 + &offset, 0.8),
        TestFunction::gaussian_bump(x0 - &offset, 1.2),
    ]
}

/// `simulate`: run the ensemble and write terminal states (one row per
/// completed path) plus the run manifest.
pub fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model().map_err(to_core)?;
    let sub = cfg.subordinator().map_err(to_core)?;
    let x0 = cfg.x0_vector().map_err(to_core)?;
    let opts = verify::EnsembleOpts::new(cfg.t, cfg.step, cfg.paths, cfg.seed);
    let res = verify::ensemble_run(&model, &sub, &x0, &opts)?;
    let mut s = String::new();
    for i in 1..=model.dim {
        s.push_str(&format!("coord_{i},"));
    }
    s.push_str("sup_lyapunov\n");
    for (x, h) in res.terminal.iter().zip(&res.sup_lyapunov) {
        for c in x.iter() {
            s.push_str(&emit::fmt_float(*c));
            s.push(',');
        }
        s.push_str(&emit::fmt_float(*h));
        s.push('\n');
    }
    emit::write_file(&out_dir.join("terminal_states.csv"), s.as_bytes()).map_err(io_err)?;
    emit::write_file(
        &out_dir.join("manifest.txt"),
        emit::manifest(cfg, verify::resolve_workers(None)).as_bytes(),
    )
    .map_err(io_err)?;
    println!(
        "simulated {} paths ({} aborted); wrote {}",
        res.completed(),
        res.aborted,
        out_dir.join("terminal_states.csv").display()
    );
    Ok(())
}

/// `covariance`: per-path spectral diagnostics of the Malliavin covariance.
pub fn run_covariance(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model().map_err(to_core)?;
    let sub = cfg.subordinator().map_err(to_core)?;
    let x0 = cfg.x0_vector().map_err(to_core)?;
    let opts = verify::EnsembleOpts::new(cfg.t, cfg.step, cfg.paths, cfg.seed);
    let res = verify::ensemble_run(&model, &sub, &x0, &opts)?;
    let mut s = String::from("det,min_eig,xi,degenerate\n");
    for c in &res.covariance {
        s.push_str(&format!(
            "{},{},{},{}\n",
            emit::fmt_float(c.det),
            emit::fmt_float(c.min_eig),
            emit::fmt_float(c.xi),
            u8::from(c.degenerate)
        ));
    }
    emit::write_file(&out_dir.join("covariance.csv"), s.as_bytes()).map_err(io_err)?;
    emit::write_file(
        &out_dir.join("manifest.txt"),
        emit::manifest(cfg, verify::resolve_workers(None)).as_bytes(),
    )
    .map_err(io_err)?;
    println!(
        "covariance of {} paths ({} degenerate); wrote {}",
        res.completed(),
        res.covariance.iter().filter(|c| c.degenerate).count(),
        out_dir.join("covariance.csv").display()
    );
    Ok(())
}

/// `density`: ensemble, KDE over the padded box, density grid emission.
pub fn run_density(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model().map_err(to_core)?;
    let sub = cfg.subordinator().map_err(to_core)?;
    let x0 = cfg.x0_vector().map_err(to_core)?;
    let mut dopts = probes::DensityProbeOpts::new(cfg.t, cfg.step, cfg.paths, cfg.seed);
    dopts.beta3_min = cfg.beta3_min;
    let out = probes::density_probe(&model, &sub, &x0, &dopts)?;
    emit::emit_density_grid(&out.estimate, &out_dir.join("density_grid.csv")).map_err(io_err)?;
    emit::write_file(
        &out_dir.join("manifest.txt"),
        emit::manifest(cfg, verify::resolve_workers(None)).as_bytes(),
    )
    .map_err(io_err)?;
    println!(
        "density on {} grid points (normalization {:.4}); wrote {}",
        out.estimate.points.len(),
        out.estimate.normalization().unwrap_or(f64::NAN),
        out_dir.join("density_grid.csv").display()
    );
    Ok(())
}

fn to_core(e: crate::config::ConfigError) -> levyflow::Error {
    levyflow::Error::Invalid(e.to_string())
}

fn io_err(e: std::io::Error) -> levyflow::Error {
    levyflow::Error::Invalid(format!("i/o error: {e}"))
}
