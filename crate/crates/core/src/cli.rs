//! Run configuration (TOML), study dispatch and CSV emission.
//!
//! A configuration has the sections `geometry`, `pml`, `problem`, `mesh`,
//! `study` and `output`; every key is optional and falls back to the
//! defaults of the straight unit-width guide at `μ0 = 20`. Unknown keys and
//! invalid values are reported together, each with its `section.key` path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::assembly::SourceSpec;
use crate::cross_section::{axial_wavenumber, CrossSection, WeightProfile};
use crate::geometry::{MetricField, Preset};
use crate::harness::{
    oracle_difference, reflection_ratios, run_convergence, run_decay_check, run_lap_consistency,
    run_pullback_check, run_stability, solve_finite_pml, ControlSweep, Criterion, FiniteSolution,
    StudyConfig, StudyReport,
};
use crate::pml::{validate_lambda, PmlSpec, ProfileKind};
use crate::report::{fmt_num, Table as Csv};
use crate::spectrum::{
    decay_endpoint_by_bisection, default_xi_max, distance_table, essential_curves, spectral_distance,
    DEFAULT_SAMPLES,
};
use crate::{PmlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Modes,
    Spectrum,
    Solve,
    Converge,
    Stability,
    Pullback,
    Decay,
    Lap,
}

impl StudyKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "modes" => StudyKind::Modes,
            "spectrum" => StudyKind::Spectrum,
            "solve" => StudyKind::Solve,
            "converge" => StudyKind::Converge,
            "stability" => StudyKind::Stability,
            "pullback" => StudyKind::Pullback,
            "decay" => StudyKind::Decay,
            "lap" => StudyKind::Lap,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Modes => "modes",
            StudyKind::Spectrum => "spectrum",
            StudyKind::Solve => "solve",
            StudyKind::Converge => "converge",
            StudyKind::Stability => "stability",
            StudyKind::Pullback => "pullback",
            StudyKind::Decay => "decay",
            StudyKind::Lap => "lap",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            StudyKind::Modes => &[],
            StudyKind::Spectrum => &["beta", "betas", "xi_max", "samples"],
            StudyKind::Solve => &["R"],
            StudyKind::Converge => &["R_list", "R_reference"],
            StudyKind::Stability => &["R_list", "control", "control_R", "control_mu0_min", "control_mu0_max", "control_samples", "control_nx_per_unit", "control_ny"],
            StudyKind::Pullback => &["lambda_real", "R", "levels"],
            StudyKind::Decay => &["R"],
            StudyKind::Lap => &["r_list", "lambda_im_list", "extra", "alpha"],
        }
    }
}

/// Study-specific parameters with their defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyParams {
    Modes,
    Spectrum { beta: f64, betas: Vec<f64>, xi_max: Option<f64>, samples: usize },
    Solve { length: f64 },
    Converge { lengths: Vec<f64>, reference: f64 },
    Stability { lengths: Vec<f64>, control: Option<ControlParams> },
    Pullback { lambda_real: f64, length: f64, levels: Vec<usize> },
    Decay { length: f64 },
    Lap { rs: Vec<f64>, lambda_ims: Vec<f64>, extra: f64, alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlParams {
    pub length: f64,
    pub mu0_min: f64,
    pub mu0_max: f64,
    pub samples: usize,
    pub nx_per_unit: usize,
    pub ny: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub study: StudyConfig,
    pub kind: StudyKind,
    pub params: StudyParams,
    pub output_dir: PathBuf,
    pub emit_fields: bool,
}

struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn section<'a>(&mut self, root: &'a Table, name: &str, allowed: &[&str]) -> Option<&'a Table> {
        match root.get(name) {
            None => None,
            Some(Value::Table(t)) => {
                self.reject_unknown(t, name, allowed);
                Some(t)
            }
            Some(_) => {
                self.errors.push(format!("{name}: expected a table"));
                None
            }
        }
    }

    fn reject_unknown(&mut self, t: &Table, prefix: &str, allowed: &[&str]) {
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                self.errors.push(format!("{prefix}.{key}: unknown key"));
            }
        }
    }

    fn f64(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: f64) -> f64 {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(v) => as_f64(v).unwrap_or_else(|| {
                self.errors.push(format!("{prefix}.{key}: expected a number"));
                default
            }),
        }
    }

    fn opt_f64(&mut self, t: Option<&Table>, prefix: &str, key: &str) -> Option<f64> {
        let v = t.and_then(|t| t.get(key))?;
        let x = as_f64(v);
        if x.is_none() {
            self.errors.push(format!("{prefix}.{key}: expected a number"));
        }
        x
    }

    fn usize(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: usize) -> usize {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(_) => {
                self.errors.push(format!("{prefix}.{key}: expected a non-negative integer"));
                default
            }
        }
    }

    fn bool(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: bool) -> bool {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.errors.push(format!("{prefix}.{key}: expected true or false"));
                default
            }
        }
    }

    fn string(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: &str) -> String {
        match t.and_then(|t| t.get(key)) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.errors.push(format!("{prefix}.{key}: expected a string"));
                default.to_string()
            }
        }
    }

    fn f64_list(&mut self, t: Option<&Table>, prefix: &str, key: &str, default: &[f64]) -> Vec<f64> {
        match t.and_then(|t| t.get(key)) {
            None => default.to_vec(),
            Some(Value::Array(a)) => {
                let xs: Option<Vec<f64>> = a.iter().map(as_f64).collect();
                xs.unwrap_or_else(|| {
                    self.errors.push(format!("{prefix}.{key}: expected an array of numbers"));
                    default.to_vec()
                })
            }
            Some(_) => {
                self.errors.push(format!("{prefix}.{key}: expected an array of numbers"));
                default.to_vec()
            }
        }
    }

    fn check(&mut self, ok: bool, path: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.errors.push(format!("{path}: {}", message()));
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

const SOURCE_KEYS: &[&str] = &["mode", "x0", "gamma", "amplitude_re", "amplitude_im"];

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| PmlError::Config(vec![format!("syntax: {e}")]))?;
    let mut rd = Reader { errors: Vec::new() };
    rd.reject_unknown(&root, "config", &["geometry", "pml", "problem", "mesh", "study", "output"]);

    let g = rd.section(&root, "geometry", &["preset", "a", "b_exp", "g_exp", "L_y", "weight"]);
    let preset_name = rd.string(g, "geometry", "preset", "straight");
    let a = rd.f64(g, "geometry", "a", 1.0);
    let b_exp = rd.f64(g, "geometry", "b_exp", 0.5);
    let g_exp = rd.f64(g, "geometry", "g_exp", -1.0);
    let width = rd.f64(g, "geometry", "L_y", 1.0);
    let weight = rd.f64_list(g, "geometry", "weight", &[1.0]);
    rd.check(width > 0.0, "geometry.L_y", || format!("must be > 0, got {width}"));
    rd.check(!weight.is_empty(), "geometry.weight", || "needs at least one coefficient".into());
    rd.check(b_exp < 1.0, "geometry.b_exp", || format!("must be < 1, got {b_exp}"));
    rd.check(g_exp < 0.0, "geometry.g_exp", || format!("must be < 0, got {g_exp}"));
    let preset = match preset_name.as_str() {
        "straight" => Some(Preset::Straight),
        "bent" => Some(Preset::Bent { a, b_exp, g_exp }),
        "stretched" => Some(Preset::Stretched),
        other => {
            rd.errors.push(format!("geometry.preset: unknown preset {other:?} (straight, bent, stretched)"));
            None
        }
    };

    let p = rd.section(&root, "pml", &["r", "w", "lambda_re", "lambda_im", "alpha", "profile"]);
    let r = rd.f64(p, "pml", "r", 6.0);
    let w = rd.f64(p, "pml", "w", 2.0);
    let lambda = Complex64::new(rd.f64(p, "pml", "lambda_re", 0.0), rd.f64(p, "pml", "lambda_im", 0.4));
    let alpha = rd.f64(p, "pml", "alpha", crate::geometry::DEFAULT_ALPHA);
    let profile = match rd.string(p, "pml", "profile", "cubic").as_str() {
        "cubic" => ProfileKind::Cubic,
        "quintic" => ProfileKind::Quintic,
        other => {
            rd.errors.push(format!("pml.profile: unknown profile {other:?} (cubic, quintic)"));
            ProfileKind::Cubic
        }
    };
    rd.check(r >= 1.0, "pml.r", || format!("must be >= 1, got {r}"));
    rd.check(w > 0.0, "pml.w", || format!("must be > 0, got {w}"));
    if let Err(e) = validate_lambda(lambda, alpha) {
        rd.errors.push(format!("pml.lambda: {e}"));
    }

    let pr = rd.section(&root, "problem", &["mu0", "n_modes", "x_phys", "source"]);
    let mu0 = rd.f64(pr, "problem", "mu0", 20.0);
    let n_modes = rd.usize(pr, "problem", "n_modes", 0);
    let x_phys = rd.f64(pr, "problem", "x_phys", 5.0);
    rd.check(x_phys > 0.0 && x_phys <= r, "problem.x_phys", || format!("must lie in (0, r = {r}], got {x_phys}"));
    let source_tables: Vec<(String, Option<&Table>)> = match pr.and_then(|t| t.get("source")) {
        None => vec![("problem.source".into(), None)],
        Some(Value::Table(t)) => vec![("problem.source".into(), Some(t))],
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                Value::Table(t) => Some((format!("problem.source[{i}]"), Some(t))),
                _ => {
                    rd.errors.push(format!("problem.source[{i}]: expected a table"));
                    None
                }
            })
            .collect(),
        Some(_) => {
            rd.errors.push("problem.source: expected a table or an array of tables".into());
            Vec::new()
        }
    };
    let mut sources = Vec::new();
    for (prefix, t) in &source_tables {
        if let Some(t) = t {
            rd.reject_unknown(t, prefix, SOURCE_KEYS);
        }
        let s = SourceSpec {
            mode: rd.usize(*t, prefix, "mode", 1),
            x0: rd.f64(*t, prefix, "x0", 3.0),
            gamma: rd.f64(*t, prefix, "gamma", 4.0),
            amplitude: Complex64::new(rd.f64(*t, prefix, "amplitude_re", 1.0), rd.f64(*t, prefix, "amplitude_im", 0.0)),
        };
        rd.check(s.gamma > 0.0, &format!("{prefix}.gamma"), || format!("must be > 0, got {}", s.gamma));
        rd.check(s.support_end() < r, &format!("{prefix}.x0"), || {
            format!("support end x0 + 4/sqrt(gamma) = {:.4} must stay below r = {r}", s.support_end())
        });
        sources.push(s);
    }

    let m = rd.section(&root, "mesh", &["nx_per_unit", "ny"]);
    let nx_per_unit = rd.usize(m, "mesh", "nx_per_unit", 40);
    let ny = rd.usize(m, "mesh", "ny", 40);
    rd.check(nx_per_unit >= 4, "mesh.nx_per_unit", || format!("must be >= 4, got {nx_per_unit}"));
    rd.check(ny >= 4, "mesh.ny", || format!("must be >= 4, got {ny}"));

    let st_raw = match root.get("study") {
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            rd.errors.push("study: expected a table".into());
            None
        }
        None => None,
    };
    let kind_name = rd.string(st_raw, "study", "kind", "solve");
    let kind = StudyKind::parse(&kind_name);
    if kind.is_none() {
        rd.errors.push(format!(
            "study.kind: unknown study {kind_name:?} (modes, spectrum, solve, converge, stability, pullback, decay, lap)"
        ));
    }
    let kind = kind.unwrap_or(StudyKind::Solve);
    if let Some(t) = st_raw {
        let mut allowed = vec!["kind"];
        allowed.extend_from_slice(kind.keys());
        rd.reject_unknown(t, "study", &allowed);
    }
    let st = st_raw;
    let params = match kind {
        StudyKind::Modes => StudyParams::Modes,
        StudyKind::Spectrum => {
            let beta = rd.f64(st, "study", "beta", 0.0);
            rd.check(beta >= 0.0, "study.beta", || format!("must be >= 0, got {beta}"));
            let samples = rd.usize(st, "study", "samples", DEFAULT_SAMPLES);
            rd.check(samples >= 2, "study.samples", || "must be >= 2".into());
            StudyParams::Spectrum {
                beta,
                betas: rd.f64_list(st, "study", "betas", &[0.0, 0.25, 0.5, 0.75, 1.0, 1.25]),
                xi_max: rd.opt_f64(st, "study", "xi_max"),
                samples,
            }
        }
        StudyKind::Solve => StudyParams::Solve { length: rd.f64(st, "study", "R", 14.0) },
        StudyKind::Converge => {
            let default: Vec<f64> = (10..=16).map(f64::from).collect();
            let lengths = rd.f64_list(st, "study", "R_list", &default);
            let reference = rd.f64(st, "study", "R_reference", 24.0);
            let max = lengths.iter().copied().fold(0.0, f64::max);
            rd.check(reference >= 1.5 * max, "study.R_reference", || {
                format!("must be >= 1.5 × max(R_list) = {}", 1.5 * max)
            });
            StudyParams::Converge { lengths, reference }
        }
        StudyKind::Stability => {
            let default: Vec<f64> = (10..=24).map(f64::from).collect();
            let lengths = rd.f64_list(st, "study", "R_list", &default);
            let (lo, hi) = lengths.iter().fold((f64::INFINITY, 0.0f64), |acc, &x| (acc.0.min(x), acc.1.max(x)));
            rd.check(hi >= 2.0 * lo, "study.R_list", || "must span at least a factor 2".into());
            let control = rd.bool(st, "study", "control", true).then(|| ControlParams {
                length: rd.f64(st, "study", "control_R", 10.0),
                mu0_min: rd.f64(st, "study", "control_mu0_min", 12.0),
                mu0_max: rd.f64(st, "study", "control_mu0_max", 28.0),
                samples: rd.usize(st, "study", "control_samples", 161),
                nx_per_unit: rd.usize(st, "study", "control_nx_per_unit", 10),
                ny: rd.usize(st, "study", "control_ny", 10),
            });
            if let Some(c) = &control {
                rd.check(c.samples >= 3, "study.control_samples", || "must be >= 3".into());
                rd.check(c.mu0_max > c.mu0_min, "study.control_mu0_max", || "must exceed control_mu0_min".into());
            }
            StudyParams::Stability { lengths, control }
        }
        StudyKind::Pullback => {
            let lambda_real = rd.f64(st, "study", "lambda_real", 0.35);
            rd.check(lambda_real.abs() < alpha.sin(), "study.lambda_real", || {
                format!("|lambda| < sin(alpha) violated: {lambda_real} vs {:.6}", alpha.sin())
            });
            let levels: Vec<usize> =
                rd.f64_list(st, "study", "levels", &[16.0, 32.0, 64.0]).iter().map(|&l| l as usize).collect();
            rd.check(levels.len() >= 2 && levels.iter().all(|&l| l >= 4), "study.levels", || {
                "needs at least two levels, each >= 4".into()
            });
            StudyParams::Pullback { lambda_real, length: rd.f64(st, "study", "R", 14.0), levels }
        }
        StudyKind::Decay => {
            rd.check(lambda.im > 0.0, "pml.lambda_im", || "decay study needs Im lambda > 0".into());
            StudyParams::Decay { length: rd.f64(st, "study", "R", 18.0) }
        }
        StudyKind::Lap => {
            let rs = rd.f64_list(st, "study", "r_list", &[6.0, 9.0]);
            let lambda_ims = rd.f64_list(st, "study", "lambda_im_list", &[0.3, 0.4, 0.5]);
            let lap_alpha = rd.f64(st, "study", "alpha", 0.6);
            for &li in &lambda_ims {
                if let Err(e) = validate_lambda(Complex64::new(lambda.re, li), lap_alpha) {
                    rd.errors.push(format!("study.lambda_im_list: {e}"));
                }
            }
            let rmin = rs.iter().copied().fold(f64::INFINITY, f64::min);
            rd.check(x_phys <= rmin, "study.r_list", || format!("window end {x_phys} exceeds min r = {rmin}"));
            StudyParams::Lap { rs, lambda_ims, extra: rd.f64(st, "study", "extra", 8.0), alpha: lap_alpha }
        }
    };

    let o = rd.section(&root, "output", &["directory", "emit_fields"]);
    let output_dir = PathBuf::from(rd.string(o, "output", "directory", "out"));
    let emit_fields = rd.bool(o, "output", "emit_fields", false);

    if !rd.errors.is_empty() {
        return Err(PmlError::Config(rd.errors));
    }

    // Cross-module invariants; errors here still carry a section path.
    let study = build_study(preset.unwrap_or(Preset::Straight), width, &weight, alpha, PmlSpec { r, w, lambda, alpha, profile }, sources, mu0, n_modes)
        .map_err(|(path, e)| PmlError::Config(vec![format!("{path}: {e}")]))?;
    let study = StudyConfig { nx_per_unit, ny, x_phys, ..study };
    study.validate().map_err(|e| PmlError::Config(vec![format!("problem: {e}")]))?;
    Ok(RunConfig { study, kind, params, output_dir, emit_fields })
}

#[allow(clippy::too_many_arguments)]
fn build_study(
    preset: Preset,
    width: f64,
    weight: &[f64],
    alpha: f64,
    spec: PmlSpec,
    sources: Vec<SourceSpec>,
    mu0: f64,
    n_modes: usize,
) -> std::result::Result<StudyConfig, (&'static str, PmlError)> {
    let profile = if weight == [1.0] { WeightProfile::Flat } else { WeightProfile::Polynomial(weight.to_vec()) };
    let cs = CrossSection::new(width, profile).map_err(|e| ("geometry.weight", e))?;
    let field = MetricField::new(preset, cs, alpha).map_err(|e| ("geometry.preset", e))?;
    let cfg = StudyConfig::new(field, spec, sources, mu0).map_err(|e| ("problem", e))?;
    if n_modes > cfg.basis.len() {
        return cfg.with_n_modes(n_modes).map_err(|e| ("problem.n_modes", e));
    }
    Ok(cfg)
}

/// In-memory result of a run: CSV files by name and the overall verdict.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: BTreeMap<String, String>,
    pub criteria: Vec<Criterion>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }

    /// SHA-256 of every file, hex encoded.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(name, body)| {
                let d = Sha256::digest(body.as_bytes());
                (name.clone(), d.iter().map(|b| format!("{b:02x}")).collect())
            })
            .collect()
    }
}

fn field_table(sol: &FiniteSolution) -> Csv {
    let mut t = Csv::new(&["x", "y", "re", "im"]);
    for (n, v) in sol.values.iter().enumerate() {
        let (x, y) = sol.mesh.coords(n);
        t.push_nums(&[x, y, v.re, v.im]);
    }
    t
}

pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let cfg = &config.study;
    let mut files = BTreeMap::new();
    let mut reports: Vec<StudyReport> = Vec::new();
    let mut extra_criteria = Vec::new();
    match &config.params {
        StudyParams::Modes => {
            let mut t = Csv::new(&["j", "nu_j", "k_j_re", "k_j_im"]);
            for (j, &nu) in cfg.basis.eigenvalues().iter().enumerate() {
                let k = axial_wavenumber(cfg.mu0, nu)?;
                t.push(vec![j.to_string(), fmt_num(nu), fmt_num(k.re), fmt_num(k.im)]);
            }
            files.insert("modes.csv".into(), t.render());
        }
        StudyParams::Spectrum { beta, betas, xi_max, samples } => {
            let xm = xi_max.unwrap_or_else(|| default_xi_max(cfg.mu0, &cfg.basis) + 3.0 * beta);
            let curves = essential_curves(cfg.spec.lambda, *beta, &cfg.basis, xm, *samples)?;
            files.insert("spectrum.csv".into(), curves.to_table().render());
            let d = spectral_distance(Complex64::new(cfg.mu0, 0.0), &curves)?;
            let mut t = distance_table(cfg.mu0, cfg.spec.lambda, &cfg.basis, betas)?;
            t.push(vec![fmt_num(*beta), fmt_num(d)]);
            files.insert("distance.csv".into(), t.render());
            if cfg.spec.lambda.im != 0.0 {
                let target = cfg.beta_max()?;
                let found = decay_endpoint_by_bisection(cfg.mu0, cfg.spec.lambda, &cfg.basis, 3.0 * target, 1e-6)?;
                extra_criteria.push(Criterion::at_most("decay_endpoint_error", (found - target).abs(), 1e-3));
            }
        }
        StudyParams::Solve { length } => {
            let sol = solve_finite_pml(cfg, *length)?;
            let mut t = Csv::new(&["R", "window_l2", "window_h1", "full_l2", "full_h1", "source_l2", "residual"]);
            t.push_nums(&[sol.length, sol.window_l2, sol.window_h1, sol.full_l2, sol.full_h1, sol.source_l2, sol.residual]);
            files.insert("solve.csv".into(), t.render());
            extra_criteria.push(Criterion::at_most("solver_residual", sol.residual, cfg.tol));
            if cfg.field.preset() == Preset::Straight {
                let d = oracle_difference(cfg, &sol)?;
                extra_criteria.push(Criterion::at_most("oracle_difference", d, 2e-2));
                if cfg.spec.lambda.im > 0.0 {
                    let mut r = Csv::new(&["mode", "k_re", "c_out_re", "c_out_im", "c_in_re", "c_in_im", "ratio"]);
                    for m in reflection_ratios(cfg, &sol)? {
                        r.push(vec![
                            m.mode.to_string(),
                            fmt_num(m.wavenumber.re),
                            fmt_num(m.outgoing.re),
                            fmt_num(m.outgoing.im),
                            fmt_num(m.incoming.re),
                            fmt_num(m.incoming.im),
                            fmt_num(m.ratio()),
                        ]);
                    }
                    files.insert("reflection.csv".into(), r.render());
                }
            }
            if config.emit_fields {
                files.insert("fields.csv".into(), field_table(&sol).render());
            }
        }
        StudyParams::Converge { lengths, reference } => {
            let report = run_convergence(cfg, lengths, *reference)?;
            let mut t = report.table.clone();
            let fit = report.fit.clone();
            t.push(match fit {
                Some(f) => vec![
                    "fit".into(),
                    fmt_num(f.rate),
                    fmt_num(f.residual),
                    format!("{}", f.points),
                ],
                None => vec!["fit".into(), "nan".into(), "nan".into(), "0".into()],
            });
            files.insert("converge.csv".into(), t.render());
            if config.emit_fields {
                files.insert("fields.csv".into(), field_table(&solve_finite_pml(cfg, *reference)?).render());
            }
            reports.push(report);
        }
        StudyParams::Stability { lengths, control } => {
            let sweep = control.as_ref().map(|c| ControlSweep {
                length: c.length,
                mu0: (0..c.samples)
                    .map(|i| c.mu0_min + (c.mu0_max - c.mu0_min) * i as f64 / (c.samples - 1) as f64)
                    .collect(),
                nx_per_unit: c.nx_per_unit,
                ny: c.ny,
            });
            let report = run_stability(cfg, lengths, sweep.as_ref())?;
            files.insert("stability.csv".into(), report.table.render());
            reports.push(report);
        }
        StudyParams::Pullback { lambda_real, length, levels } => {
            let lv: Vec<(usize, usize)> = levels.iter().map(|&l| (l, l)).collect();
            let report = run_pullback_check(cfg, *lambda_real, *length, &lv)?;
            files.insert("pullback.csv".into(), report.table.render());
            reports.push(report);
        }
        StudyParams::Decay { length } => {
            let report = run_decay_check(cfg, *length)?;
            files.insert("decay.csv".into(), report.table.render());
            if config.emit_fields {
                files.insert("fields.csv".into(), field_table(&solve_finite_pml(cfg, *length)?).render());
            }
            reports.push(report);
        }
        StudyParams::Lap { rs, lambda_ims, extra, alpha } => {
            let lambdas: Vec<Complex64> = lambda_ims.iter().map(|&li| Complex64::new(cfg.spec.lambda.re, li)).collect();
            let report = run_lap_consistency(cfg, rs, &lambdas, *extra, *alpha)?;
            files.insert("lap.csv".into(), report.table.render());
            reports.push(report);
        }
    }
    let name = config.kind.name();
    let mut criteria = extra_criteria;
    for r in &reports {
        criteria.extend(r.criteria.iter().cloned());
    }
    let mut t = Csv::new(&["study", "criterion", "value", "threshold", "passed"]);
    for c in &criteria {
        t.push(vec![name.into(), c.name.clone(), fmt_num(c.value), c.threshold.clone(), c.passed.to_string()]);
    }
    files.insert("criteria.csv".into(), t.render());
    for r in &reports {
        for note in &r.notes {
            log::info!("{name}: {note}");
        }
    }
    Ok(RunOutput { files, criteria })
}
