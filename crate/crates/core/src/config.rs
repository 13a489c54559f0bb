//! TOML experiment configuration.
//!
//! The sharp-interface model is mapped onto the base scheme by
//! `κ_surf = ε`, `κ_pot = 1/ε`, `Θ_eff = Θ/ε` and noise amplitude
//! `amplitude · ε^γ`; with `ε = 1` this is the base model unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{step_ratio, NoiseSpec, Sigma};
use crate::harness::{InitialCondition, RunConfig, Scheme};
use crate::reference::ImplicitSolverSpec;
use crate::spectral::{Grid, GridSpec};
use crate::stepper::{PotentialSpec, SchemeParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigDocument {
    pub model: ModelConfig,
    pub discretization: DiscretizationConfig,
    pub run: RunSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub theta: f64,
    /// `inv_sqrt`, `constant` or `cosine`.
    pub sigma: String,
    pub sigma_constant: f64,
    pub noise_modes: usize,
    pub q_exponent: f64,
    pub amplitude: f64,
    /// `two_mode`, `tanh_disk` or `zero`.
    pub initial: String,
    pub initial_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationConfig {
    pub dim: usize,
    pub modes: usize,
    pub nodes: usize,
    pub tau: f64,
    pub final_time: f64,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSection {
    pub scheme: String,
    pub paths: usize,
    pub seed: u64,
    pub output_dir: String,
    pub output_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    /// `simulate`, `converge-time`, `converge-space`, `energy` or `interface`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_grid: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_ref: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_refinement: Option<usize>,
    /// Step sizes for the energy-law remainder table of the `energy` study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law_taus: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    model: Option<RawModel>,
    discretization: Option<RawDiscretization>,
    run: Option<RawRun>,
    study: Option<RawStudy>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawModel {
    epsilon: Option<f64>,
    gamma: Option<f64>,
    c1: Option<f64>,
    c2: Option<f64>,
    c3: Option<f64>,
    theta: Option<f64>,
    sigma: Option<String>,
    sigma_constant: Option<f64>,
    noise_modes: Option<usize>,
    q_exponent: Option<f64>,
    amplitude: Option<f64>,
    initial: Option<String>,
    initial_radius: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    dim: Option<usize>,
    modes: Option<usize>,
    nodes: Option<usize>,
    tau: Option<f64>,
    final_time: Option<f64>,
    solver_tolerance: Option<f64>,
    solver_max_iterations: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    scheme: Option<String>,
    paths: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<String>,
    output_times: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    kind: Option<String>,
    tau_grid: Option<Vec<f64>>,
    tau_ref: Option<f64>,
    mode_grid: Option<Vec<usize>>,
    mode_ref: Option<usize>,
    schemes: Option<Vec<String>>,
    reference_refinement: Option<usize>,
    law_taus: Option<Vec<f64>>,
}

const STUDY_KINDS: [&str; 5] = ["simulate", "converge-time", "converge-space", "energy", "interface"];

/// Collects missing keys instead of stopping at the first.
struct Required<'a> {
    missing: &'a mut Vec<String>,
}

impl Required<'_> {
    fn get<T>(&mut self, v: Option<T>, key: &str) -> Option<T> {
        if v.is_none() {
            self.missing.push(format!("{key}: required key is missing"));
        }
        v
    }
}

/// Parses and validates a configuration document; the error lists every violation.
pub fn parse_config(text: &str) -> Result<ConfigDocument> {
    let raw: RawDocument = toml::from_str(text).map_err(|e| Error::Config(syntax_message(text, &e)))?;
    let mut problems = Vec::new();
    let m = raw.model.unwrap_or_default();
    let d = raw.discretization.unwrap_or_default();
    let r = raw.run.unwrap_or_default();

    let mut req = Required { missing: &mut problems };
    let theta = req.get(m.theta, "model.theta");
    let sigma = req.get(m.sigma, "model.sigma");
    let sigma_constant = req.get(m.sigma_constant, "model.sigma_constant");
    let amplitude = req.get(m.amplitude, "model.amplitude");
    let initial = req.get(m.initial, "model.initial");
    let dim = req.get(d.dim, "discretization.dim");
    let modes = req.get(d.modes, "discretization.modes");
    let tau = req.get(d.tau, "discretization.tau");
    let final_time = req.get(d.final_time, "discretization.final_time");
    let scheme = req.get(r.scheme, "run.scheme");
    let paths = req.get(r.paths, "run.paths");
    let seed = req.get(r.seed, "run.seed");

    let study = match raw.study {
        None => None,
        Some(s) => {
            let kind = req.get(s.kind, "study.kind");
            kind.map(|kind| StudyConfig {
                kind,
                tau_grid: s.tau_grid,
                tau_ref: s.tau_ref,
                mode_grid: s.mode_grid,
                mode_ref: s.mode_ref,
                schemes: s.schemes,
                reference_refinement: s.reference_refinement,
                law_taus: s.law_taus,
            })
        }
    };

    let (
        Some(theta),
        Some(sigma),
        Some(sigma_constant),
        Some(amplitude),
        Some(initial),
        Some(dim),
        Some(modes),
        Some(tau),
        Some(final_time),
        Some(scheme),
        Some(paths),
        Some(seed),
    ) = (theta, sigma, sigma_constant, amplitude, initial, dim, modes, tau, final_time, scheme, paths, seed)
    else {
        return Err(Error::Config(problems.join("\n")));
    };

    let doc = ConfigDocument {
        model: ModelConfig {
            epsilon: m.epsilon.unwrap_or(1.0),
            gamma: m.gamma.unwrap_or(0.0),
            c1: m.c1.unwrap_or(0.25),
            c2: m.c2.unwrap_or(0.0),
            c3: m.c3.unwrap_or(-0.5),
            theta,
            sigma,
            sigma_constant,
            noise_modes: m.noise_modes.unwrap_or(4),
            q_exponent: m.q_exponent.unwrap_or(1.0),
            amplitude,
            initial,
            initial_radius: m.initial_radius.unwrap_or(0.25),
        },
        discretization: DiscretizationConfig {
            dim,
            modes,
            nodes: d.nodes.unwrap_or(2 * modes),
            tau,
            final_time,
            solver_tolerance: d.solver_tolerance.unwrap_or(ImplicitSolverSpec::default().tolerance),
            solver_max_iterations: d.solver_max_iterations.unwrap_or(ImplicitSolverSpec::default().max_iterations),
        },
        run: RunSection {
            scheme,
            paths,
            seed,
            output_dir: r.output_dir.unwrap_or_else(|| "out".into()),
            output_times: r.output_times.unwrap_or_default(),
        },
        study,
    };
    problems.extend(doc.violations());
    if problems.is_empty() {
        Ok(doc)
    } else {
        Err(Error::Config(problems.join("\n")))
    }
}

fn syntax_message(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("syntax error at line {line}: {}", e.message())
        }
        None => format!("syntax error: {}", e.message()),
    }
}

fn parse_sigma(name: &str, c: f64) -> Option<Sigma> {
    match name {
        "inv_sqrt" => Some(Sigma::InvSqrt(c)),
        "constant" => Some(Sigma::Constant(c)),
        "cosine" => Some(Sigma::Cosine(c)),
        _ => None,
    }
}

impl ConfigDocument {
    /// Semantic checks; each entry names the offending key.
    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let m = &self.model;
        let d = &self.discretization;
        let r = &self.run;
        if !(m.epsilon > 0.0 && m.epsilon.is_finite()) {
            v.push(format!("model.epsilon: must be positive, got {}", m.epsilon));
        }
        if !m.gamma.is_finite() {
            v.push("model.gamma: must be finite".into());
        }
        if m.epsilon > 0.0 && m.epsilon.is_finite() {
            if let Err(e) = self.potential() {
                v.push(format!("model: {}", e.root()));
            }
        }
        if parse_sigma(&m.sigma, m.sigma_constant).is_none() {
            v.push(format!("model.sigma: unknown family '{}' (inv_sqrt, constant, cosine)", m.sigma));
        }
        if !m.sigma_constant.is_finite() {
            v.push("model.sigma_constant: must be finite".into());
        }
        if m.noise_modes == 0 {
            v.push("model.noise_modes: must be positive".into());
        } else if m.noise_modes > d.modes {
            v.push(format!("model.noise_modes: J = {} exceeds discretization.modes = {}", m.noise_modes, d.modes));
        }
        if !(m.q_exponent >= 0.0 && m.q_exponent.is_finite()) {
            v.push("model.q_exponent: must be nonnegative".into());
        }
        if !(m.amplitude >= 0.0 && m.amplitude.is_finite()) {
            v.push("model.amplitude: must be nonnegative".into());
        }
        match m.initial.as_str() {
            "zero" => {}
            "two_mode" => {
                if d.dim != 2 || d.modes < 3 {
                    v.push("model.initial: two_mode needs dim = 2 and modes >= 3".into());
                }
            }
            "tanh_disk" => {
                if d.dim != 2 {
                    v.push("model.initial: tanh_disk needs dim = 2".into());
                }
                if !(m.initial_radius > 0.0 && m.initial_radius < 0.5) {
                    v.push("model.initial_radius: must lie in (0, 0.5)".into());
                }
            }
            other => v.push(format!("model.initial: unknown profile '{other}' (two_mode, tanh_disk, zero)")),
        }

        if !(d.dim == 1 || d.dim == 2) {
            v.push(format!("discretization.dim: must be 1 or 2, got {}", d.dim));
        }
        if d.modes == 0 {
            v.push("discretization.modes: must be positive".into());
        }
        if d.nodes < 2 * d.modes {
            v.push(format!(
                "discretization.nodes: dealiasing rule requires nodes >= 2 * modes, got {} < {}",
                d.nodes,
                2 * d.modes
            ));
        }
        let tau_ok = d.tau > 0.0 && d.tau.is_finite();
        if !tau_ok {
            v.push(format!("discretization.tau: must be positive, got {}", d.tau));
        }
        let t_ok = d.final_time > 0.0 && d.final_time.is_finite();
        if !t_ok {
            v.push(format!("discretization.final_time: must be positive, got {}", d.final_time));
        }
        if tau_ok && t_ok && step_ratio(d.final_time, d.tau).is_err() {
            v.push("discretization.final_time: must be an integer multiple of tau".into());
        }
        if ImplicitSolverSpec::new(d.solver_tolerance, d.solver_max_iterations).is_err() {
            v.push("discretization.solver_tolerance / solver_max_iterations: must be positive".into());
        }

        if Scheme::parse(&r.scheme).is_none() {
            v.push(format!("run.scheme: unknown scheme '{}' (ssav, standard_sav, implicit)", r.scheme));
        }
        if r.paths == 0 {
            v.push("run.paths: must be at least 1".into());
        }
        if r.output_dir.is_empty() {
            v.push("run.output_dir: must not be empty".into());
        }
        for &t in &r.output_times {
            let on_grid = t == 0.0 || (tau_ok && t > 0.0 && t <= d.final_time * (1.0 + 1e-12) && step_ratio(t, d.tau).is_ok());
            if !on_grid {
                v.push(format!("run.output_times: {t} is not a step time in [0, final_time]"));
            }
        }

        if let Some(s) = &self.study {
            v.extend(self.study_violations(s, tau_ok && t_ok));
        }
        v
    }

    fn study_violations(&self, s: &StudyConfig, times_ok: bool) -> Vec<String> {
        let mut v = Vec::new();
        let d = &self.discretization;
        if !STUDY_KINDS.contains(&s.kind.as_str()) {
            v.push(format!("study.kind: unknown kind '{}'", s.kind));
        }
        let divides = |t: f64| times_ok && t > 0.0 && step_ratio(d.final_time, t).is_ok();
        if s.kind == "converge-time" {
            match (&s.tau_grid, s.tau_ref) {
                (Some(grid), Some(tref)) => {
                    if grid.is_empty() {
                        v.push("study.tau_grid: must not be empty".into());
                    }
                    if !divides(tref) {
                        v.push("study.tau_ref: final_time must be an integer multiple of tau_ref".into());
                    }
                    for &t in grid {
                        if !divides(t) || !(tref > 0.0 && step_ratio(t, tref).is_ok()) {
                            v.push(format!("study.tau_grid: {t} must divide final_time and be a multiple of tau_ref"));
                        }
                    }
                }
                _ => v.push("study: converge-time needs tau_grid and tau_ref".into()),
            }
        }
        if s.kind == "converge-space" {
            match (&s.mode_grid, s.mode_ref) {
                (Some(grid), Some(mref)) => {
                    if grid.is_empty() || grid.contains(&0) {
                        v.push("study.mode_grid: must be nonempty and positive".into());
                    }
                    if grid.iter().any(|&m| m > mref) {
                        v.push("study.mode_grid: entries must not exceed mode_ref".into());
                    }
                    if let Some(&min) = grid.iter().min() {
                        if self.model.noise_modes > min {
                            v.push(format!("study.mode_grid: noise_modes J = {} exceeds the smallest M = {min}", self.model.noise_modes));
                        }
                    }
                }
                _ => v.push("study: converge-space needs mode_grid and mode_ref".into()),
            }
        }
        if let Some(schemes) = &s.schemes {
            if schemes.is_empty() {
                v.push("study.schemes: must not be empty".into());
            }
            for name in schemes {
                if Scheme::parse(name).is_none() {
                    v.push(format!("study.schemes: unknown scheme '{name}'"));
                }
            }
        }
        if s.reference_refinement == Some(0) {
            v.push("study.reference_refinement: must be positive".into());
        }
        if let Some(taus) = &s.law_taus {
            if taus.is_empty() {
                v.push("study.law_taus: must not be empty".into());
            }
            let min = taus.iter().cloned().fold(f64::INFINITY, f64::min);
            for &t in taus {
                if !divides(t) || !(min > 0.0 && step_ratio(t, min).is_ok()) {
                    v.push(format!("study.law_taus: {t} must divide final_time and be a multiple of the smallest entry"));
                }
            }
        }
        v
    }

    /// `κ_pot f + Θ/ε` with `κ_pot = 1/ε`.
    pub fn potential(&self) -> Result<PotentialSpec> {
        let m = &self.model;
        PotentialSpec::new(m.c1, m.c2, m.c3, m.theta / m.epsilon, 1.0 / m.epsilon)
    }

    pub fn effective_amplitude(&self) -> f64 {
        self.model.amplitude * self.model.epsilon.powf(self.model.gamma)
    }

    pub fn sigma(&self) -> Result<Sigma> {
        parse_sigma(&self.model.sigma, self.model.sigma_constant)
            .ok_or_else(|| Error::Config(format!("unknown sigma family '{}'", self.model.sigma)))
    }

    pub fn scheme_params(&self) -> Result<SchemeParams> {
        let d = &self.discretization;
        let grid = Grid::new(GridSpec::new(d.dim, d.modes, d.nodes)?);
        let noise = NoiseSpec::new(d.dim, self.model.noise_modes, self.model.q_exponent, self.effective_amplitude(), self.sigma()?)?;
        SchemeParams::new(grid, d.tau, self.model.epsilon, self.potential()?, noise)
    }

    pub fn initial_condition(&self) -> Result<InitialCondition> {
        match self.model.initial.as_str() {
            "zero" => Ok(InitialCondition::Zero),
            "two_mode" => Ok(InitialCondition::TwoMode),
            "tanh_disk" => Ok(InitialCondition::TanhDisk { epsilon: self.model.epsilon, radius: self.model.initial_radius }),
            other => Err(Error::Config(format!("unknown initial profile '{other}'"))),
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let d = &self.discretization;
        let cfg = RunConfig {
            params: self.scheme_params()?,
            final_time: d.final_time,
            paths: self.run.paths,
            base_seed: self.run.seed,
            scheme: Scheme::parse(&self.run.scheme).ok_or_else(|| Error::Config(format!("unknown scheme '{}'", self.run.scheme)))?,
            initial: self.initial_condition()?,
            output_times: self.run.output_times.clone(),
            solver: ImplicitSolverSpec::new(d.solver_tolerance, d.solver_max_iterations)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn study_schemes(&self) -> Result<Vec<Scheme>> {
        match self.study.as_ref().and_then(|s| s.schemes.as_ref()) {
            None => Ok(vec![Scheme::Ssav, Scheme::StandardSav, Scheme::Implicit]),
            Some(names) => names
                .iter()
                .map(|n| Scheme::parse(n).ok_or_else(|| Error::Config(format!("unknown scheme '{n}'"))))
                .collect(),
        }
    }

    /// Canonical TOML text; `parse_config(&doc.serialize())` returns `doc`.
    pub fn serialize(&self) -> String {
        toml::to_string(self).expect("configuration documents are always representable")
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("ex_eps1", include_str!("../presets/ex_eps1.toml")),
    ("ex_eps1_desk", include_str!("../presets/ex_eps1_desk.toml")),
    ("sharp_gamma1", include_str!("../presets/sharp_gamma1.toml")),
    ("sharp_gamma1_desk", include_str!("../presets/sharp_gamma1_desk.toml")),
    ("sharp_gamma0", include_str!("../presets/sharp_gamma0.toml")),
    ("sharp_gamma0_desk", include_str!("../presets/sharp_gamma0_desk.toml")),
    ("table1", include_str!("../presets/table1.toml")),
    ("table1_desk", include_str!("../presets/table1_desk.toml")),
    ("table2", include_str!("../presets/table2.toml")),
    ("table2_desk", include_str!("../presets/table2_desk.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

pub fn preset(name: &str) -> Result<ConfigDocument> {
    let text = preset_text(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
    parse_config(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_lists_required_keys() {
        let msg = parse_config("").unwrap_err().to_string();
        for key in [
            "model.theta",
            "model.sigma",
            "model.sigma_constant",
            "model.amplitude",
            "model.initial",
            "discretization.dim",
            "discretization.modes",
            "discretization.tau",
            "discretization.final_time",
            "run.scheme",
            "run.paths",
            "run.seed",
        ] {
            assert!(msg.contains(key), "{key} missing from: {msg}");
        }
    }

    #[test]
    fn ex_eps1_preset() {
        let doc = preset("ex_eps1").unwrap();
        let m = &doc.model;
        assert_eq!(m.epsilon, 1.0);
        assert_eq!(m.theta, 1.0);
        assert_eq!(doc.sigma().unwrap(), Sigma::InvSqrt(2.5));
        assert_eq!(m.amplitude, 1.0);
        assert_eq!((m.c1, m.c2, m.c3), (0.25, 0.0, -0.5));
        assert_eq!(m.noise_modes, 4);
        assert_eq!(doc.initial_condition().unwrap(), InitialCondition::TwoMode);
        let p = doc.scheme_params().unwrap();
        assert_eq!(p.surf_scale(), 1.0);
        assert_eq!(p.potential().scale(), 1.0);
    }

    #[test]
    fn every_preset_parses_and_round_trips() {
        for name in preset_names() {
            let doc = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(parse_config(&doc.serialize()).unwrap(), doc, "{name}");
            doc.run_config().unwrap();
        }
    }

    #[test]
    fn dealiasing_violation_is_named() {
        let text = preset_text("ex_eps1_desk").unwrap().replace("nodes = 64", "nodes = 40");
        let msg = parse_config(&text).unwrap_err().to_string();
        assert!(msg.contains("dealiasing"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}\n[extra]\nx = 1\n", preset_text("ex_eps1_desk").unwrap());
        assert!(parse_config(&text).is_err());
        let text = preset_text("ex_eps1_desk").unwrap().replace("theta = 1.0", "theta = 1.0\nthetta = 2.0");
        let msg = parse_config(&text).unwrap_err().to_string();
        assert!(msg.contains("thetta"), "{msg}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let msg = parse_config("[model]\ntheta = 1.0\nsigma = \n").unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn several_violations_are_reported_together() {
        let text = preset_text("ex_eps1_desk")
            .unwrap()
            .replace("paths = 200", "paths = 0")
            .replace("scheme = \"ssav\"", "scheme = \"euler\"");
        let msg = parse_config(&text).unwrap_err().to_string();
        assert!(msg.contains("run.paths") && msg.contains("run.scheme"), "{msg}");
    }

    #[test]
    fn epsilon_mapping() {
        let doc = preset("table1_desk").unwrap();
        let p = doc.scheme_params().unwrap();
        let eps = doc.model.epsilon;
        assert_eq!(p.surf_scale(), eps);
        assert!((p.potential().scale() - 1.0 / eps).abs() < 1e-12);
        assert!((p.potential().theta() - doc.model.theta / eps).abs() < 1e-12);
        let gamma1 = preset("sharp_gamma1_desk").unwrap();
        assert!((gamma1.effective_amplitude() - gamma1.model.amplitude * gamma1.model.epsilon).abs() < 1e-15);
    }
}
