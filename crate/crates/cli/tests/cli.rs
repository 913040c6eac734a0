//! End-to-end tests of the binary: config handling, exit codes, and
//! byte-stable outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levyflow"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("levyflow_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env("LEVYFLOW_WORKERS", "2")
        .output()
        .unwrap()
}

#[test]
fn empty_probe_list_exits_zero_with_manifest_only() {
    let dir = tmp_dir("empty");
    let cfg = dir.join("exp.cfg");
    write(
        &cfg,
        "[model]\nname = free\ndim = 1\n[run]\nseed = 5\npaths = 100\n[probes]\nenabled =\n",
    );
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("o/manifest.txt").exists());
    assert!(dir.join("o/summary.csv").exists());
    assert!(!dir.join("o/density_grid.csv").exists());
}

#[test]
fn malformed_config_reports_line_and_exits_two() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("exp.cfg");
    write(&cfg, "[model]\nname = free\nwhat = 7\n[run]\nseed = 1\n");
    let out = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "stderr: {err}");
    assert!(err.contains("what"), "stderr: {err}");
}

#[test]
fn failing_probe_exits_one() {
    let dir = tmp_dir("fail");
    let cfg = dir.join("exp.cfg");
    // the degenerate kinetic model must trip the degeneracy detector
    write(
        &cfg,
        "[model]\nname = kinetic_degenerate\nphase_dim = 1\n\
         [subordinator]\ndrift = 0.0\ncomponents = zero, tempered(0.5, unit, 1.0)\n\
         [run]\nseed = 2\npaths = 300\nt = 0.25\nstep = 0.005\nx0 = 0.5, 0.0\n\
         [probes]\nenabled = degeneracy\n",
    );
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.join("o/summary.csv")).unwrap();
    assert!(summary.contains("FAIL"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tmp_dir("repro");
    let cfg = dir.join("exp.cfg");
    write(
        &cfg,
        "[model]\nname = free\ndim = 2\n\
         [subordinator]\ndrift = 0.0\ncomponents = tempered(0.5, unit, 1.0)\n\
         [run]\nseed = 9\npaths = 1500\nt = 0.5\nstep = 0.01\n\
         [probes]\nenabled = transforms, density\n",
    );
    let o1 = dir.join("o1");
    let o2 = dir.join("o2");
    let a = bin()
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o1.to_str().unwrap(),
        ])
        .env("LEVYFLOW_WORKERS", "1")
        .output()
        .unwrap();
    let b = bin()
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            o2.to_str().unwrap(),
        ])
        .env("LEVYFLOW_WORKERS", "4")
        .output()
        .unwrap();
    assert!(a.status.success() && b.status.success());
    for file in [
        "summary.csv",
        "probe_transforms.csv",
        "probe_density.csv",
        "density_grid.csv",
    ] {
        let x = std::fs::read(o1.join(file)).unwrap();
        let y = std::fs::read(o2.join(file)).unwrap();
        assert_eq!(x, y, "{file} differs between worker counts");
    }
}

#[test]
fn density_grid_schema_and_row_order() {
    let dir = tmp_dir("grid");
    let cfg = dir.join("exp.cfg");
    write(
        &cfg,
        "[model]\nname = free\ndim = 2\n\
         [subordinator]\ndrift = 1.0\ncomponents = zero\n\
         [run]\nseed = 3\npaths = 2000\nt = 0.5\nstep = 0.01\n\
         [probes]\nenabled = density\n",
    );
    let out_dir = dir.join("o");
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let grid = std::fs::read_to_string(out_dir.join("density_grid.csv")).unwrap();
    let mut lines = grid.lines();
    assert_eq!(lines.next().unwrap(), "coord_1,coord_2,density");
    // lexicographic: first coordinate constant over the inner sweep
    let first_vals: Vec<f64> = lines
        .take(3)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(first_vals[0], first_vals[1]);
    assert_eq!(first_vals[1], first_vals[2]);
}

#[test]
fn presets_list_and_print() {
    let out = run(&["presets"]);
    assert!(out.status.success());
    let listing = String::from_utf8_lossy(&out.stdout);
    assert!(listing.contains("smoke"));
    let out = run(&["presets", "smoke"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[model]"));
    let out = run(&["presets", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_and_covariance_write_tables() {
    let dir = tmp_dir("sim");
    let cfg = dir.join("exp.cfg");
    write(
        &cfg,
        "[model]\nname = kinetic_quadratic\nphase_dim = 1\n\
         [subordinator]\ndrift = 0.0\ncomponents = zero, tempered(0.5, unit, 1.0)\n\
         [run]\nseed = 4\npaths = 500\nt = 0.25\nstep = 0.005\nx0 = 1.0, 0.0\n",
    );
    let out_dir = dir.join("o");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = std::fs::read_to_string(out_dir.join("terminal_states.csv")).unwrap();
    assert!(table.starts_with("coord_1,coord_2,sup_lyapunov\n"));
    assert_eq!(table.lines().count(), 501);

    let out = run(&[
        "covariance",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(out_dir.join("covariance.csv")).unwrap();
    assert!(table.starts_with("det,min_eig,xi,degenerate\n"));
}

#[test]
fn flag_overrides_reach_the_manifest() {
    let dir = tmp_dir("override");
    let out_dir = dir.join("o");
    let out = run(&[
        "verify",
        "--preset",
        "smoke",
        "--seed",
        "77",
        "--paths",
        "1200",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 77"));
    assert!(manifest.contains("paths = 1200"));
}
