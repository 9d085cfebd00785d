//! End-to-end studies on the truncated layer problem: agreement with the
//! modal oracle, reflection, exponential convergence in `R`, stability,
//! the pullback identity for real scaling, decay inside the layer and
//! independence of the physical-region solution from `(r, λ)`.
//!
//! Every study returns a [`StudyReport`] with its numeric rows and explicit
//! pass/fail criteria.

use num_complex::Complex64;

use crate::assembly::{
    assemble_system_with, build_mesh, discrete_norms, AssemblyOptions, Mesh, SourceSpec,
};
use crate::cross_section::{axial_wavenumber, beta_max, neumann_eigenpairs, ModalBasis};
use crate::exec::Exec;
use crate::geometry::{MetricField, Preset};
use crate::pml::{profile_eval, PmlSpec};
use crate::reference::{
    discrete_axial_wavenumber, discrete_transverse_eigenvalue, mode_amplitudes, project_onto_mode,
    reference_field,
};
use crate::report::{fmt_num, Table};
use crate::sparse::{self, SolveMethod};
use crate::{PmlError, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest log-space RMS residual of a conclusive exponential fit.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub field: MetricField,
    pub spec: PmlSpec,
    pub sources: Vec<SourceSpec>,
    pub mu0: f64,
    pub basis: ModalBasis,
    pub nx_per_unit: usize,
    pub ny: usize,
    /// Right end of the physical window `[0, x_phys] × Ω`.
    pub x_phys: f64,
    pub exec: Exec,
    pub tol: f64,
}

impl StudyConfig {
    /// Builds a configuration with a basis that resolves every threshold
    /// below `mu0` plus the first one above it.
    pub fn new(field: MetricField, spec: PmlSpec, sources: Vec<SourceSpec>, mu0: f64) -> Result<Self> {
        let basis = basis_above(&field, mu0, 0)?;
        let cfg = StudyConfig {
            field,
            spec,
            sources,
            mu0,
            basis,
            nx_per_unit: 40,
            ny: 40,
            x_phys: 5.0,
            exec: Exec::default(),
            tol: sparse::DEFAULT_TOL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Straight unit-width guide, `μ0 = 20`, mode-1 Gaussian source at
    /// `x0 = 3`, `r = 6`, `w = 2`, `λ = 0.4i`, 40 elements per unit.
    pub fn straight_default() -> Self {
        let cs = crate::cross_section::CrossSection::flat(1.0).expect("unit width is valid");
        let spec = PmlSpec::new(6.0, 2.0, Complex64::new(0.0, 0.4), crate::geometry::DEFAULT_ALPHA)
            .expect("default layer is valid");
        let src = SourceSpec { mode: 1, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) };
        StudyConfig::new(MetricField::straight(cs), spec, vec![src], 20.0).expect("default study is valid")
    }

    pub fn with_n_modes(mut self, n: usize) -> Result<Self> {
        self.basis = basis_above(&self.field, self.mu0, n)?;
        Ok(self)
    }

    pub fn with_mesh(mut self, nx_per_unit: usize, ny: usize) -> Self {
        self.nx_per_unit = nx_per_unit;
        self.ny = ny;
        self
    }

    pub fn with_spec(mut self, spec: PmlSpec) -> Self {
        self.spec = spec;
        self
    }

    pub fn with_sources(mut self, sources: Vec<SourceSpec>) -> Self {
        self.sources = sources;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.x_phys > 0.0 && self.x_phys <= self.spec.r) {
            return Err(PmlError::InvalidParameter(format!(
                "physical window end x_phys = {} must lie in (0, r = {}]",
                self.x_phys, self.spec.r
            )));
        }
        for &nu in self.basis.eigenvalues() {
            axial_wavenumber(self.mu0, nu)?;
        }
        for s in &self.sources {
            s.validate(&self.basis, self.spec.r)?;
            if s.support_end() > self.x_phys + 1e-12 {
                log::warn!("source support ends at {:.3}, beyond the window end {}", s.support_end(), self.x_phys);
            }
        }
        Ok(())
    }

    pub fn beta_max(&self) -> Result<f64> {
        beta_max(self.mu0, self.spec.lambda, &self.basis)
    }

    /// Indices of modes with real axial wavenumber.
    pub fn propagating_modes(&self) -> Vec<usize> {
        (0..self.basis.len()).filter(|&j| self.basis.eigenvalue(j) < self.mu0).collect()
    }
}

fn basis_above(field: &MetricField, mu0: f64, at_least: usize) -> Result<ModalBasis> {
    let cs = field.cross_section();
    let mut n = at_least.max(2);
    loop {
        let b = neumann_eigenpairs(cs, n)?;
        if b.eigenvalues().last().is_some_and(|&nu| nu > mu0) {
            return Ok(b);
        }
        if n > 4096 {
            return Err(PmlError::InsufficientModes { mu0, modes: n, largest: b.eigenvalues()[n - 1] });
        }
        n *= 2;
    }
}

/// Finite-element solution of the truncated layer problem.
#[derive(Debug, Clone)]
pub struct FiniteSolution {
    pub length: f64,
    pub mesh: Mesh,
    /// Nodal values including the Dirichlet zeros.
    pub values: Vec<Complex64>,
    pub window_l2: f64,
    pub window_h1: f64,
    pub full_l2: f64,
    pub full_h1: f64,
    /// `L²` norm of the source over the whole domain.
    pub source_l2: f64,
    pub residual: f64,
    pub method: SolveMethod,
}

pub fn solve_finite_pml(config: &StudyConfig, length: f64) -> Result<FiniteSolution> {
    solve_with(config, &config.field, &config.spec, length, config.nx_per_unit, config.ny)
}

fn solve_with(
    config: &StudyConfig,
    field: &MetricField,
    spec: &PmlSpec,
    length: f64,
    nx_per_unit: usize,
    ny: usize,
) -> Result<FiniteSolution> {
    let min_len = spec.onset() + 0.5 * spec.w;
    if length < min_len - 1e-12 {
        return Err(PmlError::InvalidParameter(format!("truncation R = {length} is below r + 1 + w/2 = {min_len}")));
    }
    let mesh = build_mesh(length, nx_per_unit, ny, field.cross_section().length())?;
    let options = AssemblyOptions { exec: config.exec, ..Default::default() };
    let system = assemble_system_with(&mesh, field, spec, config.mu0, options)?;
    let rhs = system.assemble_rhs(&config.sources, &config.basis);
    let solution = sparse::solve(&system.matrix, &rhs, config.tol)?;
    let values = system.expand(&solution.x);
    let window = (0.0, config.x_phys.min(length));
    let (window_l2, window_h1) = discrete_norms(&mesh, &values, window)?;
    let (full_l2, full_h1) = discrete_norms(&mesh, &values, (0.0, length))?;
    let source_nodal: Vec<Complex64> = (0..mesh.node_count())
        .map(|n| {
            let (x, y) = mesh.coords(n);
            config.sources.iter().map(|s| s.eval(&config.basis, x, y)).sum()
        })
        .collect();
    let (source_l2, _) = discrete_norms(&mesh, &source_nodal, (0.0, length))?;
    Ok(FiniteSolution {
        length,
        mesh,
        values,
        window_l2,
        window_h1,
        full_l2,
        full_h1,
        source_l2,
        residual: solution.residual,
        method: solution.method,
    })
}

/// Relative `L²` and `H¹` differences of two solutions over `[0, x_end]`;
/// both meshes must share spacing and transverse resolution.
pub fn window_difference(a: &FiniteSolution, b: &FiniteSolution, x_end: f64) -> Result<(f64, f64)> {
    if a.mesh.ny != b.mesh.ny || (a.mesh.hx - b.mesh.hx).abs() > 1e-12 * a.mesh.hx {
        return Err(PmlError::InvalidParameter("window comparison needs a common mesh family".into()));
    }
    let (small, large) = if a.mesh.nx <= b.mesh.nx { (a, b) } else { (b, a) };
    let cols = ((x_end / small.mesh.hx).round() as usize + 1).min(small.mesh.nx + 1);
    let shared = cols * (small.mesh.ny + 1);
    let mut diff = vec![ZERO; small.mesh.node_count()];
    for n in 0..shared {
        diff[n] = small.values[n] - large.values[n];
    }
    let (dl2, dh1) = discrete_norms(&small.mesh, &diff, (0.0, x_end))?;
    let (rl2, rh1) = discrete_norms(&large.mesh, &large.values, (0.0, x_end))?;
    Ok((dl2 / rl2, dh1 / rh1))
}

/// Relative `L²` difference on the window between a solution and the modal
/// Green's-function oracle (straight preset only).
pub fn oracle_difference(config: &StudyConfig, sol: &FiniteSolution) -> Result<f64> {
    if config.field.preset() != Preset::Straight {
        return Err(PmlError::InvalidParameter("the modal oracle exists only for the straight preset".into()));
    }
    let mesh = &sol.mesh;
    let cols = (config.x_phys / mesh.hx).round() as usize + 1;
    let grid: Vec<f64> = (0..cols).map(|i| mesh.x(i)).collect();
    let reference = reference_field(&config.sources, &config.basis, config.mu0, &grid, config.exec)?;
    let nodal = reference.to_nodal(mesh)?;
    let mut diff = vec![ZERO; mesh.node_count()];
    for n in 0..cols * (mesh.ny + 1) {
        diff[n] = sol.values[n] - nodal[n];
    }
    let (d, _) = discrete_norms(mesh, &diff, (0.0, config.x_phys))?;
    let (r, _) = discrete_norms(mesh, &nodal, (0.0, config.x_phys))?;
    Ok(d / r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeReflection {
    pub mode: usize,
    pub wavenumber: Complex64,
    pub outgoing: Complex64,
    pub incoming: Complex64,
}

impl ModeReflection {
    pub fn ratio(&self) -> f64 {
        self.incoming.norm() / self.outgoing.norm()
    }
}

/// Outgoing/incoming split of every propagating mode between the source and
/// the layer. On a flat cross-section the wavenumbers of the discrete scheme
/// are used, so the split is free of dispersion error.
pub fn reflection_ratios(config: &StudyConfig, sol: &FiniteSolution) -> Result<Vec<ModeReflection>> {
    if config.field.preset() != Preset::Straight {
        return Err(PmlError::InvalidParameter("mode splitting needs the product metric of the straight preset".into()));
    }
    let mesh = &sol.mesh;
    let modes = config.propagating_modes();
    let flat = config.field.cross_section().weight().is_flat();
    let ks: Vec<Complex64> = modes
        .iter()
        .map(|&j| {
            if flat {
                let nu_h = discrete_transverse_eigenvalue(j, mesh.hy, mesh.width);
                Ok(discrete_axial_wavenumber(config.mu0, nu_h, mesh.hx))
            } else {
                axial_wavenumber(config.mu0, config.basis.eigenvalue(j))
            }
        })
        .collect::<Result<_>>()?;
    let support = config.sources.iter().map(|s| s.support_end()).fold(0.0, f64::max);
    let i1 = (support / mesh.hx).ceil() as usize;
    let last = ((config.spec.r / mesh.hx).floor() as usize).min(mesh.nx);
    let projections: Vec<Vec<Complex64>> =
        modes.iter().map(|&j| project_onto_mode(mesh, &sol.values, &config.basis, j)).collect();
    let u1: Vec<Complex64> = projections.iter().map(|p| p[i1]).collect();
    let mut failure = None;
    // Farthest-first: longer baselines are better conditioned.
    for i2 in (i1 + 1..=last).rev() {
        let u2: Vec<Complex64> = projections.iter().map(|p| p[i2]).collect();
        match mode_amplitudes(mesh.x(i1), &u1, mesh.x(i2), &u2, &ks) {
            Ok(c) => {
                return Ok(modes
                    .iter()
                    .zip(&ks)
                    .zip(c)
                    .map(|((&mode, &wavenumber), (outgoing, incoming))| ModeReflection { mode, wavenumber, outgoing, incoming })
                    .collect())
            }
            Err(e) => failure = Some(e),
        }
    }
    Err(failure.unwrap_or_else(|| {
        PmlError::InvalidParameter(format!("no room for two stations between the source end {support} and r"))
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition, e.g. `<= 2e-2`.
    pub threshold: String,
    pub passed: bool,
}

impl Criterion {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Criterion { name: name.into(), value, threshold: format!("<= {bound:e}"), passed: value <= bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Criterion { name: name.into(), value, threshold: format!(">= {bound:e}"), passed: value >= bound }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Criterion { name: name.into(), value, threshold: format!("in [{lo}, {hi}]"), passed: (lo..=hi).contains(&value) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub rate: f64,
    pub intercept: f64,
    /// RMS residual of the fit in log space.
    pub residual: f64,
    pub points: usize,
    pub range: (f64, f64),
    pub inconclusive: bool,
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub study: String,
    pub table: Table,
    pub fit: Option<FitSummary>,
    pub criteria: Vec<Criterion>,
    pub notes: Vec<String>,
}

impl StudyReport {
    fn new(study: &str, table: Table) -> Self {
        StudyReport { study: study.into(), table, fit: None, criteria: Vec::new(), notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn criteria_table(&self) -> Table {
        let mut t = Table::new(&["study", "criterion", "value", "threshold", "passed"]);
        for c in &self.criteria {
            t.push(vec![self.study.clone(), c.name.clone(), fmt_num(c.value), c.threshold.clone(), c.passed.to_string()]);
        }
        t
    }
}

/// Least-squares fit of `log e = c - rate·x`.
pub fn fit_log_linear(xs: &[f64], errors: &[f64]) -> Result<FitSummary> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(errors).filter(|(_, e)| **e > 0.0).map(|(x, e)| (*x, e.ln())).collect();
    if pts.len() < 3 {
        return Err(PmlError::InconclusiveFit { points: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(FitSummary {
        rate: -slope,
        intercept,
        residual,
        points: pts.len(),
        range: (pts[0].0, pts[pts.len() - 1].0),
        inconclusive: residual > FIT_RESIDUAL_LIMIT,
    })
}

/// Marks the discretization floor: when at least two errors lie within 3× of
/// the smallest one they form a plateau, and every row from the first of
/// them on is excluded from the fit.
pub fn pre_floor_mask(errors: &[f64]) -> Vec<bool> {
    let min = errors.iter().copied().filter(|e| *e > 0.0).fold(f64::INFINITY, f64::min);
    let near: Vec<bool> = errors.iter().map(|&e| e <= 3.0 * min).collect();
    if near.iter().filter(|b| **b).count() < 2 {
        return errors.iter().map(|&e| e > 0.0).collect();
    }
    let first = near.iter().position(|b| *b).unwrap_or(errors.len());
    (0..errors.len()).map(|i| i < first && errors[i] > 0.0).collect()
}

/// Truncation errors on the window against the largest-`R` solve of the same
/// mesh family and the fitted exponential rate.
pub fn run_convergence(config: &StudyConfig, lengths: &[f64], reference_length: f64) -> Result<StudyReport> {
    let max_len = lengths.iter().copied().fold(0.0, f64::max);
    if reference_length < 1.5 * max_len {
        return Err(PmlError::InvalidParameter(format!(
            "reference R = {reference_length} must be at least 1.5 × max R = {}",
            1.5 * max_len
        )));
    }
    let reference = solve_finite_pml(config, reference_length)?;
    let sols = config.exec.try_map(lengths, |&r| solve_finite_pml(config, r))?;
    let diffs = sols
        .iter()
        .map(|s| window_difference(s, &reference, config.x_phys))
        .collect::<Result<Vec<_>>>()?;
    let l2: Vec<f64> = diffs.iter().map(|d| d.0).collect();
    let mask = pre_floor_mask(&l2);
    let mut table = Table::new(&["R", "l2_err", "h1_err", "used_in_fit"]);
    for ((r, d), used) in lengths.iter().zip(&diffs).zip(&mask) {
        table.push(vec![fmt_num(*r), fmt_num(d.0), fmt_num(d.1), (*used as u8).to_string()]);
    }
    let xs: Vec<f64> = lengths.iter().zip(&mask).filter(|p| *p.1).map(|p| *p.0).collect();
    let es: Vec<f64> = l2.iter().zip(&mask).filter(|p| *p.1).map(|p| *p.0).collect();
    let mut report = StudyReport::new("converge", table);
    let target = config.beta_max()?;
    let fit = fit_log_linear(&xs, &es);
    report.criteria.push(Criterion::at_least("pre_floor_rows", xs.len() as f64, 3.0));
    match fit {
        Ok(fit) => {
            report.notes.push(format!(
                "fitted rate {:.6} over R in [{}, {}], log residual {:.3e}, beta_max {:.6}",
                fit.rate, fit.range.0, fit.range.1, fit.residual, target
            ));
            if fit.inconclusive {
                report.notes.push("fit residual above 0.1: rate inconclusive".into());
            }
            report.criteria.push(Criterion::within("fitted_rate", fit.rate, 0.8 * target, 1.2 * target));
            report.fit = Some(fit);
        }
        Err(e) => report.notes.push(e.to_string()),
    }
    Ok(report)
}

/// Solution-to-source norm ratios over a range of truncations, plus the
/// unscaled (`λ = 0`) control sweep in `μ0` on a coarse mesh.
pub fn run_stability(config: &StudyConfig, lengths: &[f64], control: Option<&ControlSweep>) -> Result<StudyReport> {
    let sols = config.exec.try_map(lengths, |&r| solve_finite_pml(config, r))?;
    let mut table = Table::new(&["R", "l2_ratio", "h1_ratio", "residual"]);
    let mut ratios = Vec::with_capacity(sols.len());
    for s in &sols {
        let q = s.full_l2 / s.source_l2;
        ratios.push(q);
        table.push_nums(&[s.length, q, s.full_h1 / s.source_l2, s.residual]);
    }
    let mut report = StudyReport::new("stability", table);
    let spread = ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
    report.criteria.push(Criterion::at_most("norm_ratio_spread", spread, 2.0));
    if let Some(c) = control {
        let spike = control_sweep(config, c)?;
        report.notes.push(format!(
            "lambda = 0 sweep: max/median response {:.3} at mu0 = {:.4}; scaled sweep {:.3}",
            spike.unscaled, spike.unscaled_at, spike.scaled
        ));
        report.criteria.push(Criterion::at_least("unscaled_spike", spike.unscaled, 5.0));
    }
    Ok(report)
}

/// Coarse `μ0` sweep used to expose truncated-cavity resonances at `λ = 0`.
#[derive(Debug, Clone)]
pub struct ControlSweep {
    pub length: f64,
    pub mu0: Vec<f64>,
    pub nx_per_unit: usize,
    pub ny: usize,
}

impl ControlSweep {
    pub fn default_sweep() -> Self {
        ControlSweep { length: 10.0, mu0: (0..=160).map(|i| 12.0 + 0.1 * i as f64).collect(), nx_per_unit: 10, ny: 10 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSpike {
    pub unscaled: f64,
    pub unscaled_at: f64,
    pub scaled: f64,
}

fn peak_over_median(values: &[f64]) -> (f64, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let (i, max) = values.iter().enumerate().fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    (max / median, i)
}

pub fn control_sweep(config: &StudyConfig, sweep: &ControlSweep) -> Result<SweepSpike> {
    let run = |lambda: Complex64| -> Result<Vec<f64>> {
        let spec = config.spec.with_lambda(lambda)?;
        config.exec.try_map(&sweep.mu0, |&mu0| {
            let mut cfg = config.clone();
            cfg.mu0 = mu0;
            cfg.exec = Exec::Sequential;
            let s = solve_with(&cfg, &cfg.field, &spec, sweep.length, sweep.nx_per_unit, sweep.ny)?;
            Ok(s.full_l2 / s.source_l2)
        })
    };
    let (unscaled, at) = peak_over_median(&run(ZERO)?);
    let (scaled, _) = peak_over_median(&run(config.spec.lambda)?);
    Ok(SweepSpike { unscaled, unscaled_at: sweep.mu0[at], scaled })
}

/// Compares the solve with real scaling `λ` against the unscaled solve on
/// the stretched domain `[0, R + λ s(R)]` pulled back through
/// `x ↦ x + λ s(x)`, over a sequence of mesh doublings.
pub fn run_pullback_check(config: &StudyConfig, lambda: f64, length: f64, levels: &[(usize, usize)]) -> Result<StudyReport> {
    if levels.len() < 2 {
        return Err(PmlError::InvalidParameter("pullback check needs at least two mesh levels".into()));
    }
    let spec = config.spec.with_lambda(Complex64::new(lambda, 0.0))?;
    let plain = config.spec.with_lambda(ZERO)?;
    let stretched = length + lambda * profile_eval(&spec, length).0;
    let mut rows = Vec::with_capacity(levels.len());
    for &(nx, ny) in levels {
        let deformed = solve_with(config, &config.field, &spec, length, nx, ny)?;
        // The stretched domain is not a multiple of 1/nx; its mesh keeps the
        // same element count so that both spacings halve together.
        let per_unit = (nx as f64 * length / stretched).round() as usize;
        let mapped = solve_mapped(config, &plain, stretched, deformed.mesh.nx, per_unit.max(4), ny)?;
        let mesh = &deformed.mesh;
        let pulled: Vec<Complex64> = (0..mesh.node_count())
            .map(|n| {
                let (x, y) = mesh.coords(n);
                let xs = (x + lambda * profile_eval(&spec, x).0).min(mapped.mesh.length);
                mapped.mesh.interpolate(&mapped.values, xs, y)
            })
            .collect();
        let diff: Vec<Complex64> = deformed.values.iter().zip(&pulled).map(|(a, b)| a - b).collect();
        let (d, _) = discrete_norms(mesh, &diff, (0.0, length))?;
        rows.push((mesh.hx, d / deformed.full_l2));
    }
    let mut table = Table::new(&["hx", "rel_l2_diff", "observed_order"]);
    let mut orders = Vec::new();
    for (i, &(h, d)) in rows.iter().enumerate() {
        let order = if i == 0 { f64::NAN } else { (rows[i - 1].1 / d).ln() / (rows[i - 1].0 / h).ln() };
        if i > 0 {
            orders.push(order);
        }
        table.push_nums(&[h, d, order]);
    }
    let mut report = StudyReport::new("pullback", table);
    let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
    report.criteria.push(Criterion::at_least("observed_order", worst, 1.7));
    Ok(report)
}

/// Unscaled solve on `[0, length]` with exactly `nx` axial elements.
fn solve_mapped(config: &StudyConfig, spec: &PmlSpec, length: f64, nx: usize, per_unit: usize, ny: usize) -> Result<FiniteSolution> {
    let mesh = build_mesh(length, per_unit, ny, config.field.cross_section().length())?;
    let mesh = Mesh { nx, hx: length / nx as f64, ..mesh };
    let options = AssemblyOptions { exec: config.exec, ..Default::default() };
    let system = assemble_system_with(&mesh, &config.field, spec, config.mu0, options)?;
    let rhs = system.assemble_rhs(&config.sources, &config.basis);
    let solution = sparse::solve(&system.matrix, &rhs, config.tol)?;
    let values = system.expand(&solution.x);
    let (full_l2, full_h1) = discrete_norms(&mesh, &values, (0.0, length))?;
    Ok(FiniteSolution {
        length,
        mesh,
        values,
        window_l2: f64::NAN,
        window_h1: f64::NAN,
        full_l2,
        full_h1,
        source_l2: f64::NAN,
        residual: solution.residual,
        method: solution.method,
    })
}

/// Amplitude below which a mode counts as numerically extinct.
pub const UNDERFLOW: f64 = 1e-12;

/// Log-slope of every mode amplitude inside the full-strength layer,
/// `[r + 1 + w, R - 2]`, against `|Im((1 + λ) k_j)|`.
pub fn run_decay_check(config: &StudyConfig, length: f64) -> Result<StudyReport> {
    if !(config.spec.lambda.im > 0.0) {
        return Err(PmlError::InvalidParameter("decay check needs Im lambda > 0".into()));
    }
    let sol = solve_finite_pml(config, length)?;
    let mesh = &sol.mesh;
    let (lo, hi) = (config.spec.full_strength(), length - 2.0);
    if hi - lo < 1.0 {
        return Err(PmlError::InvalidParameter(format!("fit range [{lo}, {hi}] too short; increase R")));
    }
    let cols: Vec<usize> = (0..=mesh.nx).filter(|&i| mesh.x(i) >= lo - 1e-12 && mesh.x(i) <= hi + 1e-12).collect();
    let xs: Vec<f64> = cols.iter().map(|&i| mesh.x(i)).collect();
    let one_plus = Complex64::new(1.0, 0.0) + config.spec.lambda;
    let scale = sol.window_l2.max(f64::MIN_POSITIVE);
    let mut table = Table::new(&["mode", "k_re", "k_im", "expected_rate", "fitted_rate", "ratio", "underflow"]);
    let mut report_criteria = Vec::new();
    for j in 0..config.basis.len() {
        let k = axial_wavenumber(config.mu0, config.basis.eigenvalue(j))?;
        let expected = (one_plus * k).im.abs();
        let proj = project_onto_mode(mesh, &sol.values, &config.basis, j);
        let onset = (config.spec.r / mesh.hx).round() as usize;
        let amps: Vec<f64> = cols.iter().map(|&i| proj[i].norm() / scale).collect();
        let underflow = proj[onset].norm() / scale < UNDERFLOW || amps.iter().any(|a| *a < UNDERFLOW);
        let propagating = config.basis.eigenvalue(j) < config.mu0;
        let name = format!("mode_{j}_rate_ratio");
        if underflow {
            table.push(vec![j.to_string(), fmt_num(k.re), fmt_num(k.im), fmt_num(expected), "nan".into(), "nan".into(), "1".into()]);
            if propagating {
                report_criteria.push(Criterion { name, value: f64::NAN, threshold: "underflow".into(), passed: true });
            }
            continue;
        }
        let fit = fit_log_linear(&xs, &amps)?;
        let ratio = fit.rate / expected;
        table.push(vec![j.to_string(), fmt_num(k.re), fmt_num(k.im), fmt_num(expected), fmt_num(fit.rate), fmt_num(ratio), "0".into()]);
        report_criteria.push(if propagating {
            Criterion::within(&name, ratio, 0.75, 1.25)
        } else {
            Criterion::at_least(&name, ratio, 0.75)
        });
    }
    let mut report = StudyReport::new("decay", table);
    report.criteria = report_criteria;
    Ok(report)
}

/// One `(r, λ)` combination of the consistency study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LapCase {
    pub r: f64,
    pub lambda: Complex64,
}

/// Pairwise relative window differences across `(r, λ)` with a common sign
/// of `Im λ`, plus the contrast against the opposite sign. The truncation is
/// `R = r + extra` and the sector half-angle is `alpha`.
pub fn run_lap_consistency(
    config: &StudyConfig,
    rs: &[f64],
    lambdas: &[Complex64],
    extra: f64,
    alpha: f64,
) -> Result<StudyReport> {
    if lambdas.is_empty() || rs.is_empty() {
        return Err(PmlError::InvalidParameter("lap study needs at least one r and one lambda".into()));
    }
    let sign = lambdas[0].im.signum();
    if sign == 0.0 || lambdas.iter().any(|l| l.im.signum() != sign) {
        return Err(PmlError::InvalidParameter("all lambdas must share a nonzero sign of Im".into()));
    }
    let rmin = rs.iter().copied().fold(f64::INFINITY, f64::min);
    if config.x_phys > rmin {
        return Err(PmlError::InvalidParameter(format!("window end {} exceeds min r = {rmin}", config.x_phys)));
    }
    let field = MetricField::new(config.field.preset(), config.field.cross_section().clone(), alpha)?;
    let cfg = StudyConfig { field, ..config.clone() };
    let mut cases = Vec::new();
    for &r in rs {
        for &lambda in lambdas {
            cases.push(LapCase { r, lambda });
        }
    }
    let solve_case = |c: &LapCase| -> Result<FiniteSolution> {
        let spec = PmlSpec { r: c.r, lambda: c.lambda, alpha, ..cfg.spec };
        spec.validate()?;
        solve_with(&cfg, &cfg.field, &spec, c.r + extra, cfg.nx_per_unit, cfg.ny)
    };
    let sols = cfg.exec.try_map(&cases, solve_case)?;
    let mut table = Table::new(&["r_a", "lambda_a_re", "lambda_a_im", "r_b", "lambda_b_re", "lambda_b_im", "rel_l2_diff"]);
    let mut worst: f64 = 0.0;
    for a in 0..cases.len() {
        for b in a + 1..cases.len() {
            let (d, _) = window_difference(&sols[a], &sols[b], cfg.x_phys)?;
            worst = worst.max(d);
            let (ca, cb) = (cases[a], cases[b]);
            table.push_nums(&[ca.r, ca.lambda.re, ca.lambda.im, cb.r, cb.lambda.re, cb.lambda.im, d]);
        }
    }
    let base = cases[0];
    let flipped = LapCase { r: base.r, lambda: base.lambda.conj() };
    let opposite = solve_case(&flipped)?;
    let (contrast, _) = window_difference(&sols[0], &opposite, cfg.x_phys)?;
    table.push_nums(&[base.r, base.lambda.re, base.lambda.im, flipped.r, flipped.lambda.re, flipped.lambda.im, contrast]);
    let mut report = StudyReport::new("lap", table);
    report.criteria.push(Criterion::at_most("max_same_sign_difference", worst, 1e-2));
    report.criteria.push(Criterion::at_least("opposite_sign_difference", contrast, 0.1));
    Ok(report)
}

/// FEM-versus-oracle difference on the window at the configured mesh and at
/// half the spacing.
pub fn run_oracle_check(config: &StudyConfig, length: f64) -> Result<StudyReport> {
    let coarse = solve_finite_pml(config, length)?;
    let fine_cfg = config.clone().with_mesh(2 * config.nx_per_unit, 2 * config.ny);
    let fine = solve_finite_pml(&fine_cfg, length)?;
    let (dc, df) = (oracle_difference(config, &coarse)?, oracle_difference(&fine_cfg, &fine)?);
    let mut table = Table::new(&["hx", "hy", "rel_l2_diff", "residual"]);
    table.push_nums(&[coarse.mesh.hx, coarse.mesh.hy, dc, coarse.residual]);
    table.push_nums(&[fine.mesh.hx, fine.mesh.hy, df, fine.residual]);
    let mut report = StudyReport::new("solve", table);
    report.criteria.push(Criterion::at_most("oracle_difference", dc, 2e-2));
    report.criteria.push(Criterion::at_least("refinement_factor", dc / df, 3.0));
    Ok(report)
}

/// Reflection ratios `|c⁻|/|c⁺|` of the propagating modes for each `R`.
pub fn run_reflection(config: &StudyConfig, lengths: &[f64]) -> Result<StudyReport> {
    let per_length = config.exec.try_map(lengths, |&r| {
        let s = solve_finite_pml(config, r)?;
        reflection_ratios(config, &s)
    })?;
    let mut table = Table::new(&["R", "mode", "k_re", "c_out_abs", "c_in_abs", "ratio"]);
    for (r, refl) in lengths.iter().zip(&per_length) {
        for m in refl {
            table.push_nums(&[*r, m.mode as f64, m.wavenumber.re, m.outgoing.norm(), m.incoming.norm(), m.ratio()]);
        }
    }
    // Modes the source does not excite carry only round-off.
    let peak = per_length.iter().flatten().map(|m| m.outgoing.norm()).fold(0.0, f64::max);
    let modes = per_length.first().map_or(0, |v| v.len());
    let mut worst: f64 = 0.0;
    let mut decreasing = true;
    for m in 0..modes {
        if per_length.iter().all(|v| v[m].outgoing.norm() < 1e-8 * peak) {
            continue;
        }
        let series: Vec<f64> = per_length.iter().map(|v| v[m].ratio()).collect();
        worst = series.iter().copied().fold(worst, f64::max);
        // Beyond the first R whose ratio sits within 3x of the smallest one
        // the ratio is the R-independent discretization floor.
        let mask = pre_floor_mask(&series);
        let head = mask.iter().take_while(|b| **b).count();
        let prefix = &series[..(head + 1).min(series.len())];
        decreasing &= prefix.windows(2).all(|w| w[1] < w[0]);
    }
    let mut report = StudyReport::new("reflection", table);
    report.criteria.push(Criterion::at_most("max_reflection_ratio", worst, 1e-2));
    report.criteria.push(Criterion {
        name: "ratio_decreasing_in_R".into(),
        value: decreasing as u8 as f64,
        threshold: "= 1".into(),
        passed: decreasing,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> StudyConfig {
        StudyConfig::straight_default().with_mesh(10, 10)
    }

    #[test]
    fn floor_mask_rules() {
        let clean = [1e-2, 1e-3, 1e-4, 1e-5];
        assert_eq!(pre_floor_mask(&clean), vec![true; 4]);
        let floored = [1e-2, 1e-3, 1e-4, 2e-8, 1.5e-8, 1e-8];
        assert_eq!(pre_floor_mask(&floored), vec![true, true, true, false, false, false]);
    }

    #[test]
    fn log_linear_fit_recovers_rate() {
        let xs: [f64; 4] = [10.0, 11.0, 12.0, 13.0];
        let es: Vec<f64> = xs.iter().map(|x| 3.0 * (-1.25 * x).exp()).collect();
        let f = fit_log_linear(&xs, &es).unwrap();
        assert!((f.rate - 1.25).abs() < 1e-12 && f.residual < 1e-12 && !f.inconclusive);
        assert!(matches!(fit_log_linear(&xs[..2], &es[..2]), Err(PmlError::InconclusiveFit { points: 2 })));
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let mut cfg = coarse();
        cfg.sources[0].amplitude = ZERO;
        let s = solve_finite_pml(&cfg, 10.0).unwrap();
        assert!(s.values.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn solution_is_linear_in_the_source() {
        let cfg = coarse();
        let mut doubled = cfg.clone();
        doubled.sources[0].amplitude *= 2.0;
        let a = solve_finite_pml(&cfg, 10.0).unwrap();
        let b = solve_finite_pml(&doubled, 10.0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x * 2.0 - y).norm() <= 1e-9 * y.norm().max(1e-12));
        }
        assert!((b.full_l2 / b.source_l2 - a.full_l2 / a.source_l2).abs() < 1e-9);
    }

    #[test]
    fn short_truncation_is_rejected() {
        assert!(solve_finite_pml(&coarse(), 7.5).is_err());
        assert!(solve_finite_pml(&coarse(), 8.0).is_ok());
    }

    #[test]
    fn unscaled_problem_reflects_fully() {
        let cfg = coarse().with_mesh(40, 20);
        let spec = cfg.spec.with_lambda(ZERO).unwrap();
        let cfg = cfg.with_spec(spec);
        let s = solve_finite_pml(&cfg, 10.0).unwrap();
        for m in reflection_ratios(&cfg, &s).unwrap() {
            assert!((m.ratio() - 1.0).abs() < 1e-6, "mode {} ratio {}", m.mode, m.ratio());
        }
    }

    #[test]
    fn pullback_is_exact_without_scaling() {
        let cfg = coarse();
        let r = run_pullback_check(&cfg, 0.0, 10.0, &[(8, 8), (16, 16)]).unwrap();
        let d: f64 = r.table.rows[0][1].parse().unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn reruns_are_bit_identical_across_policies() {
        let a = solve_finite_pml(&coarse().with_exec(Exec::Sequential), 10.0).unwrap();
        let b = solve_finite_pml(&coarse().with_exec(Exec::Parallel), 10.0).unwrap();
        assert_eq!(a.values, b.values);
    }
}
