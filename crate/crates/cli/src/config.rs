//! Experiment configuration: a small sectioned key/value format with
//! fail-closed parsing (unknown sections or keys are errors, with line
//! numbers) and a canonical emitter such that `parse(emit(c)) == c`.

use levyflow::model::{
    builtin_kinetic_model, degenerate_kinetic_model, free_model, ModelSpec, PotentialKind,
};
use levyflow::subordinator::{unit_scale, JumpFamily, SubordinatorSpec};
use std::fmt::Write as _;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "config line {}: {}", self.line, self.message)
        } else {
            write!(f, "config: {}", self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

/// One subordinator component family, as written in the config.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentCfg {
    Zero,
    /// `stable(alpha, scale)`; `scale` may be the literal `unit`.
    Stable {
        alpha: f64,
        scale: Option<f64>,
    },
    /// `tempered(alpha, scale, lambda)`.
    Tempered {
        alpha: f64,
        scale: Option<f64>,
        lambda: f64,
    },
}

impl ComponentCfg {
    fn emit(&self) -> String {
        let s = |v: &Option<f64>| v.map_or("unit".to_string(), |x| format!("{x}"));
        match self {
            ComponentCfg::Zero => "zero".to_string(),
            ComponentCfg::Stable { alpha, scale } => format!("stable({alpha}, {})", s(scale)),
            ComponentCfg::Tempered {
                alpha,
                scale,
                lambda,
            } => {
                format!("tempered({alpha}, {}, {lambda})", s(scale))
            }
        }
    }

    pub fn to_family(&self) -> JumpFamily {
        match *self {
            ComponentCfg::Zero => JumpFamily::Zero,
            ComponentCfg::Stable { alpha, scale } => JumpFamily::Stable {
                alpha,
                scale: scale.unwrap_or_else(|| unit_scale(alpha)),
            },
            ComponentCfg::Tempered {
                alpha,
                scale,
                lambda,
            } => JumpFamily::TemperedStable {
                alpha,
                scale: scale.unwrap_or_else(|| unit_scale(alpha)),
                lambda,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [model]
    pub model_name: String,
    pub phase_dim: usize,
    pub free_dim: usize,
    // [subordinator]
    pub drift: Vec<f64>,
    pub components: Vec<ComponentCfg>,
    // [run]
    pub t: f64,
    pub step: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    // [probes]
    pub probes: Vec<String>,
    pub beta3_min: f64,
    pub slope_margin: f64,
    pub exp_moment_p: f64,
    pub fp_h_time: f64,
    // [output]
    pub out_dir: String,
    pub formats: Vec<String>,
}

pub const KNOWN_PROBES: &[&str] = &[
    "transforms",
    "phi_theta",
    "flow_consistency",
    "covariance_oracles",
    "time_change",
    "generator_eigen",
    "fokker_planck",
    "exp_moment",
    "exp_moment_divergence",
    "small_deviation",
    "covariance_scaling",
    "flow_moments",
    "density",
    "degeneracy",
];

impl ExperimentConfig {
    /// Build the model named in the config.
    pub fn model(&self) -> Result<ModelSpec, ConfigError> {
        match self.model_name.as_str() {
            "kinetic_quadratic" => Ok(builtin_kinetic_model(
                PotentialKind::Quadratic,
                self.phase_dim,
            )),
            "kinetic_quartic" => Ok(builtin_kinetic_model(
                PotentialKind::Quartic,
                self.phase_dim,
            )),
            "kinetic_degenerate" => Ok(degenerate_kinetic_model(self.phase_dim)),
            "free" => Ok(free_model(self.free_dim)),
            other => err(0, format!("unknown model '{other}'")),
        }
    }

    pub fn model_dim(&self) -> usize {
        match self.model_name.as_str() {
            "free" => self.free_dim,
            _ => 2 * self.phase_dim,
        }
    }

    /// Build the subordinator spec, broadcasting single entries over the
    /// model dimension.
    pub fn subordinator(&self) -> Result<SubordinatorSpec, ConfigError> {
        let d = self.model_dim();
        let drift = broadcast(&self.drift, d).ok_or_else(|| ConfigError {
            line: 0,
            message: format!("drift needs 1 or {d} entries"),
        })?;
        let comps = broadcast(&self.components, d).ok_or_else(|| ConfigError {
            line: 0,
            message: format!("components needs 1 or {d} entries"),
        })?;
        let fams: Vec<JumpFamily> = comps.iter().map(|c| c.to_family()).collect();
        SubordinatorSpec::new(drift, fams).map_err(|e| ConfigError {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn x0_vector(&self) -> Result<nalgebra::DVector<f64>, ConfigError> {
        let d = self.model_dim();
        if self.x0.len() == d {
            Ok(nalgebra::DVector::from_row_slice(&self.x0))
        } else {
            err(0, format!("x0 needs {d} entries, got {}", self.x0.len()))
        }
    }

    /// Canonical text form; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        writeln!(s, "[model]").unwrap();
        writeln!(s, "name = {}", self.model_name).unwrap();
        writeln!(s, "phase_dim = {}", self.phase_dim).unwrap();
        writeln!(s, "dim = {}", self.free_dim).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[subordinator]").unwrap();
        writeln!(s, "drift = {}", list(&self.drift)).unwrap();
        writeln!(
            s,
            "components = {}",
            self.components
                .iter()
                .map(|c| c.emit())
                .collect::<Vec<_>>()
                .join(", ")
        )
        .unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[run]").unwrap();
        writeln!(s, "t = {}", self.t).unwrap();
        writeln!(s, "step = {}", self.step).unwrap();
        writeln!(s, "paths = {}", self.paths).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "x0 = {}", list(&self.x0)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[probes]").unwrap();
        writeln!(s, "enabled = {}", self.probes.join(", ")).unwrap();
        writeln!(s, "beta3_min = {}", self.beta3_min).unwrap();
        writeln!(s, "slope_margin = {}", self.slope_margin).unwrap();
        writeln!(s, "exp_moment_p = {}", self.exp_moment_p).unwrap();
        writeln!(s, "fp_h_time = {}", self.fp_h_time).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[output]").unwrap();
        writeln!(s, "dir = {}", self.out_dir).unwrap();
        writeln!(s, "formats = {}", self.formats.join(", ")).unwrap();
        s
    }

    /// FNV-1a hash of the canonical form, as fixed-width hex.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.emit().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

fn broadcast<T: Clone>(v: &[T], d: usize) -> Option<Vec<T>> {
    if v.len() == d {
        Some(v.to_vec())
    } else if v.len() == 1 {
        Some(vec![v[0].clone(); d])
    } else {
        None
    }
}

/// Split a comma list at top level (commas inside parentheses stay put).
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_f64(line: usize, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| ConfigError {
        line,
        message: format!("expected a number, got '{v}'"),
    })
}

fn parse_f64_list(line: usize, v: &str) -> Result<Vec<f64>, ConfigError> {
    split_top_level(v)
        .iter()
        .map(|x| parse_f64(line, x))
        .collect()
}

fn parse_component(line: usize, v: &str) -> Result<ComponentCfg, ConfigError> {
    let v = v.trim();
    if v == "zero" {
        return Ok(ComponentCfg::Zero);
    }
    let (name, args) = match v.find('(') {
        Some(i) if v.ends_with(')') => (&v[..i], &v[i + 1..v.len() - 1]),
        _ => {
            return err(
                line,
                format!("bad component '{v}' (expected zero | stable(a, c) | tempered(a, c, l))"),
            )
        }
    };
    let parts: Vec<String> = split_top_level(args);
    let scale_of = |s: &str| -> Result<Option<f64>, ConfigError> {
        if s.trim() == "unit" {
            Ok(None)
        } else {
            parse_f64(line, s.trim()).map(Some)
        }
    };
    match (name.trim(), parts.len()) {
        ("stable", 2) => Ok(ComponentCfg::Stable {
            alpha: parse_f64(line, &parts[0])?,
            scale: scale_of(&parts[1])?,
        }),
        ("tempered", 3) => Ok(ComponentCfg::Tempered {
            alpha: parse_f64(line, &parts[0])?,
            scale: scale_of(&parts[1])?,
            lambda: parse_f64(line, &parts[2])?,
        }),
        _ => err(line, format!("bad component '{v}'")),
    }
}

/// Parse the sectioned key/value text. Fail-closed: unknown sections, keys,
/// probe names, or model names are errors carrying the offending line.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut model_name: Option<String> = None;
    let mut seed: Option<u64> = None;
    let mut cfg = ExperimentConfig {
        model_name: String::new(),
        phase_dim: 1,
        free_dim: 1,
        drift: vec![0.0],
        components: vec![ComponentCfg::Tempered {
            alpha: 0.5,
            scale: None,
            lambda: 1.0,
        }],
        t: 0.5,
        step: 1e-3,
        paths: 10_000,
        seed: 0,
        x0: Vec::new(),
        probes: Vec::new(),
        beta3_min: 0.5,
        slope_margin: 0.5,
        exp_moment_p: 1.0,
        fp_h_time: 0.05,
        out_dir: "out".to_string(),
        formats: vec!["csv".to_string()],
    };
    let mut x0_given = false;
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(line, "unterminated section header");
            };
            match name {
                "model" | "subordinator" | "run" | "probes" | "output" => {
                    section = name.to_string();
                }
                other => return err(line, format!("unknown section [{other}]")),
            }
            continue;
        }
        let Some(eq) = content.find('=') else {
            return err(line, format!("expected 'key = value', got '{content}'"));
        };
        let key = content[..eq].trim();
        let value = content[eq + 1..].trim();
        match (section.as_str(), key) {
            ("model", "name") => model_name = Some(value.to_string()),
            ("model", "phase_dim") => {
                cfg.phase_dim = value.parse().map_err(|_| ConfigError {
                    line,
                    message: format!("bad phase_dim '{value}'"),
                })?;
            }
            ("model", "dim") => {
                cfg.free_dim = value.parse().map_err(|_| ConfigError {
                    line,
                    message: format!("bad dim '{value}'"),
                })?;
            }
            ("subordinator", "drift") => cfg.drift = parse_f64_list(line, value)?,
            ("subordinator", "components") => {
                cfg.components = split_top_level(value)
                    .iter()
                    .map(|c| parse_component(line, c))
                    .collect::<Result<_, _>>()?;
            }
            ("run", "t") => cfg.t = parse_f64(line, value)?,
            ("run", "step") => cfg.step = parse_f64(line, value)?,
            ("run", "paths") => {
                cfg.paths = value.parse().map_err(|_| ConfigError {
                    line,
                    message: format!("bad paths '{value}'"),
                })?;
            }
            ("run", "seed") => {
                seed = Some(value.parse().map_err(|_| ConfigError {
                    line,
                    message: format!("bad seed '{value}'"),
                })?);
            }
            ("run", "x0") => {
                cfg.x0 = parse_f64_list(line, value)?;
                x0_given = true;
            }
            ("probes", "enabled") => {
                cfg.probes = split_top_level(value);
                for p in &cfg.probes {
                    if !KNOWN_PROBES.contains(&p.as_str()) {
                        return err(line, format!("unknown probe '{p}'"));
                    }
                }
            }
            ("probes", "beta3_min") => cfg.beta3_min = parse_f64(line, value)?,
            ("probes", "slope_margin") => cfg.slope_margin = parse_f64(line, value)?,
            ("probes", "exp_moment_p") => cfg.exp_moment_p = parse_f64(line, value)?,
            ("probes", "fp_h_time") => cfg.fp_h_time = parse_f64(line, value)?,
            ("output", "dir") => cfg.out_dir = value.to_string(),
            ("output", "formats") => cfg.formats = split_top_level(value),
            ("", k) => return err(line, format!("key '{k}' appears before any section")),
            (sec, k) => return err(line, format!("unknown key '{k}' in section [{sec}]")),
        }
    }
    let Some(name) = model_name else {
        return err(0, "missing required key: model name");
    };
    cfg.model_name = name;
    let Some(seed) = seed else {
        return err(0, "missing required key: seed");
    };
    cfg.seed = seed;
    cfg.model()?; // validates the model name
    if !x0_given {
        cfg.x0 = vec![0.0; cfg.model_dim()];
    }
    Ok(cfg)
}

pub fn parse_file(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: 0,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse(&text)
}

/// Built-in presets, runnable as-is.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let text = preset_text(name)?;
    Some(parse(text).expect("presets are valid"))
}

pub fn preset_names() -> &'static [&'static str] {
    &["smoke", "quartic-tempered", "stable-scaling"]
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        // Gaussian reference case: every probe has a closed-form oracle.
        "smoke" => Some(
            "[model]\n\
             name = free\n\
             dim = 1\n\
             \n\
             [subordinator]\n\
             drift = 1.0\n\
             components = zero\n\
             \n\
             [run]\n\
             t = 0.5\n\
             step = 0.005\n\
             paths = 10000\n\
             seed = 1\n\
             x0 = 0.0\n\
             \n\
             [probes]\n\
             enabled = transforms, covariance_oracles, time_change, generator_eigen, fokker_planck, exp_moment, small_deviation, covariance_scaling, density, degeneracy\n\
             \n\
             [output]\n\
             dir = out/smoke\n",
        ),
        // The headline verification target: cubic-growth drift with tempered
        // anisotropic noise.
        "quartic-tempered" => Some(
            "[model]\n\
             name = kinetic_quartic\n\
             phase_dim = 1\n\
             \n\
             [subordinator]\n\
             drift = 0.0\n\
             components = zero, tempered(0.5, unit, 1.0)\n\
             \n\
             [run]\n\
             t = 0.5\n\
             step = 0.001\n\
             paths = 20000\n\
             seed = 1\n\
             x0 = 0.5, 0.0\n\
             \n\
             [probes]\n\
             enabled = transforms, phi_theta, flow_consistency, covariance_oracles, time_change, fokker_planck, exp_moment, covariance_scaling, flow_moments, density\n\
             \n\
             [output]\n\
             dir = out/quartic\n",
        ),
        // Pure stable clock: scaling laws and the expected-fail moment probe.
        "stable-scaling" => Some(
            "[model]\n\
             name = free\n\
             dim = 1\n\
             \n\
             [subordinator]\n\
             drift = 0.0\n\
             components = stable(0.5, unit)\n\
             \n\
             [run]\n\
             t = 1.0\n\
             step = 0.005\n\
             paths = 10000\n\
             seed = 1\n\
             x0 = 0.0\n\
             \n\
             [probes]\n\
             enabled = transforms, phi_theta, generator_eigen, small_deviation, covariance_scaling, exp_moment_divergence\n\
             \n\
             [output]\n\
             dir = out/stable\n",
        ),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            let again = parse(&cfg.emit()).unwrap();
            assert_eq!(cfg, again, "round trip for preset {name}");
            assert_eq!(cfg.hash(), again.hash());
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = "[model]\nname = free\nbogus = 1\n[run]\nseed = 1\n";
        let e = parse(text).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("bogus"));
    }

    #[test]
    fn unknown_probe_is_rejected() {
        let text = "[model]\nname = free\n[run]\nseed = 1\n[probes]\nenabled = nonsense\n";
        let e = parse(text).unwrap_err();
        assert!(e.message.contains("nonsense"));
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = "[model]\nname = free\n";
        let e = parse(text).unwrap_err();
        assert!(e.message.contains("seed"));
    }

    #[test]
    fn components_parse_and_broadcast() {
        let text = "[model]\nname = kinetic_quartic\nphase_dim = 1\n[subordinator]\ncomponents = tempered(0.5, unit, 2.0)\n[run]\nseed = 3\n";
        let cfg = parse(text).unwrap();
        let sub = cfg.subordinator().unwrap();
        assert_eq!(sub.dim(), 2);
        assert!(sub.exp_moment_predicate(1.5));
        assert!(!sub.exp_moment_predicate(2.5));
    }

    #[test]
    fn default_x0_is_origin() {
        let text = "[model]\nname = kinetic_quadratic\nphase_dim = 2\n[run]\nseed = 1\n";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.x0, vec![0.0; 4]);
    }
}
