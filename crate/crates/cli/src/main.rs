//! levyflow command line: simulate ensembles, assemble covariance
//! diagnostics, estimate densities, and run the verification probe suite.
//!
//! Exit codes: 0 = all probes pass or are inconclusive, 1 = some probe
//! failed, 2 = usage, configuration, or runtime error.

mod config;
mod emit;
mod run;

use levyflow::verify::Verdict;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
levyflow - Monte Carlo engine for subordinated-noise Hamiltonian systems

USAGE:
  levyflow <COMMAND> [FLAGS]

COMMANDS:
  simulate     run an ensemble and write terminal states
  covariance   run an ensemble and write covariance spectra
  density      run an ensemble and write a density grid
  verify       run the probe suite from a config; nonzero exit on FAIL
  presets      list built-in presets, or print one with `presets <name>`

FLAGS:
  --config PATH   experiment config file (or --preset NAME)
  --preset NAME   use a built-in preset instead of a file
  --seed N        override the seed
  --paths N       override the path count
  --step H        override the integrator step
  --out DIR       override the output directory

ENVIRONMENT:
  LEVYFLOW_WORKERS   worker thread count for ensembles (default: all cores)
";

struct Args {
    command: String,
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    paths: Option<usize>,
    step: Option<f64>,
    out: Option<PathBuf>,
    positional: Vec<String>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    if argv.is_empty() {
        return Err("missing command".into());
    }
    let mut args = Args {
        command: argv[0].clone(),
        config: None,
        preset: None,
        seed: None,
        paths: None,
        step: None,
        out: None,
        positional: Vec::new(),
    };
    let mut i = 1;
    let need = |i: usize, argv: &[String], flag: &str| -> Result<String, String> {
        argv.get(i)
            .cloned()
            .ok_or_else(|| format!("{flag} needs a value"))
    };
    while i < argv.len() {
        match argv[i].as_str() {
            "--config" => {
                args.config = Some(PathBuf::from(need(i + 1, argv, "--config")?));
                i += 2;
            }
            "--preset" => {
                args.preset = Some(need(i + 1, argv, "--preset")?);
                i += 2;
            }
            "--seed" => {
                args.seed = Some(
                    need(i + 1, argv, "--seed")?
                        .parse()
                        .map_err(|_| "bad --seed".to_string())?,
                );
                i += 2;
            }
            "--paths" => {
                args.paths = Some(
                    need(i + 1, argv, "--paths")?
                        .parse()
                        .map_err(|_| "bad --paths".to_string())?,
                );
                i += 2;
            }
            "--step" => {
                args.step = Some(
                    need(i + 1, argv, "--step")?
                        .parse()
                        .map_err(|_| "bad --step".to_string())?,
                );
                i += 2;
            }
            "--out" => {
                args.out = Some(PathBuf::from(need(i + 1, argv, "--out")?));
                i += 2;
            }
            "--help" | "-h" => return Err(String::new()),
            flag if flag.starts_with("--") => return Err(format!("unknown flag {flag}")),
            pos => {
                args.positional.push(pos.to_string());
                i += 1;
            }
        }
    }
    Ok(args)
}

fn load_config(args: &Args) -> Result<config::ExperimentConfig, String> {
    let mut cfg = if let Some(name) = &args.preset {
        config::preset(name).ok_or_else(|| {
            format!(
                "unknown preset '{name}' (available: {})",
                config::preset_names().join(", ")
            )
        })?
    } else if let Some(path) = &args.config {
        config::parse_file(path).map_err(|e| e.to_string())?
    } else {
        return Err("either --config or --preset is required".into());
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(paths) = args.paths {
        cfg.paths = paths;
    }
    if let Some(step) = args.step {
        cfg.step = step;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            if msg.is_empty() {
                print!("{USAGE}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {msg}\n\n{USAGE}");
            return ExitCode::from(2);
        }
    };

    match args.command.as_str() {
        "presets" => {
            if let Some(name) = args.positional.first() {
                match config::preset_text(name) {
                    Some(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    None => {
                        eprintln!(
                            "error: unknown preset '{name}' (available: {})",
                            config::preset_names().join(", ")
                        );
                        ExitCode::from(2)
                    }
                }
            } else {
                for name in config::preset_names() {
                    println!("{name}");
                }
                ExitCode::SUCCESS
            }
        }
        cmd @ ("simulate" | "covariance" | "density" | "verify") => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            let out_dir = PathBuf::from(&cfg.out_dir);
            let outcome = match cmd {
                "simulate" => run::run_simulate(&cfg, &out_dir).map(|()| Verdict::Pass),
                "covariance" => run::run_covariance(&cfg, &out_dir).map(|()| Verdict::Pass),
                "density" => run::run_density(&cfg, &out_dir).map(|()| Verdict::Pass),
                "verify" => run::run_experiment(&cfg, &out_dir),
                _ => unreachable!(),
            };
            match outcome {
                Ok(Verdict::Fail) => ExitCode::from(1),
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        other => {
            eprintln!("error: unknown command '{other}'\n\n{USAGE}");
            ExitCode::from(2)
        }
    }
}
