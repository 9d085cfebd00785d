//! Tensor-product mesh on `[0, R] × [0, L_y]`, bilinear (Q1) finite element
//! assembly of the truncated layer problem, load vectors and discrete norms.
//!
//! The bilinear form is the unconjugated
//!
//! ```text
//! a(u, v) = ∫ sqrt(det g_λ) (g_λ^{-1} ∇u · ∇v − μ0 u v) dx dy
//! ```
//!
//! with natural (deformed Neumann) conditions on `x = 0`, `y = 0`, `y = L_y`
//! and a homogeneous Dirichlet condition on `x = R`, eliminated by dropping
//! the corresponding rows and columns. Nodes are numbered `i·(ny+1) + j`
//! (`i` along the axis), so the Dirichlet nodes are the last `ny + 1`.

use num_complex::Complex64;

use crate::cross_section::ModalBasis;
use crate::exec::Exec;
use crate::geometry::MetricField;
use crate::pml::{deformed_metric, PmlSpec};
use crate::quadrature::gauss_legendre;
use crate::sparse::ComplexSparse;
use crate::{PmlError, Result};

pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub length: f64,
    pub width: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

pub fn build_mesh(length: f64, nx_per_unit: usize, ny: usize, width: f64) -> Result<Mesh> {
    build_mesh_with_budget(length, nx_per_unit, ny, width, DEFAULT_NODE_BUDGET)
}

pub fn build_mesh_with_budget(length: f64, nx_per_unit: usize, ny: usize, width: f64, budget: usize) -> Result<Mesh> {
    if !(length > 0.0 && length.is_finite()) || !(width > 0.0 && width.is_finite()) {
        return Err(PmlError::InvalidParameter(format!("mesh extents must be positive (R = {length}, L_y = {width})")));
    }
    if nx_per_unit < 4 || ny < 4 {
        return Err(PmlError::InvalidParameter(format!(
            "mesh needs nx_per_unit >= 4 and ny >= 4 (got {nx_per_unit}, {ny})"
        )));
    }
    let nx = ((length * nx_per_unit as f64).round() as usize).max(1);
    let nodes = (nx + 1) * (ny + 1);
    if nodes > budget {
        return Err(PmlError::Resource { nodes, budget });
    }
    let hx = length / nx as f64;
    let hy = width / ny as f64;
    let aspect = hx / hy;
    if !(0.1..=10.0).contains(&aspect) {
        return Err(PmlError::InvalidParameter(format!("element aspect ratio {aspect:.3} outside [0.1, 10]")));
    }
    Ok(Mesh { length, width, nx, ny, hx, hy })
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> usize {
        i * (self.ny + 1) + j
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.nx {
            self.length
        } else {
            i as f64 * self.hx
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j == self.ny {
            self.width
        } else {
            j as f64 * self.hy
        }
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = (node / (self.ny + 1), node % (self.ny + 1));
        (self.x(i), self.y(j))
    }

    pub fn dirichlet_nodes(&self) -> std::ops::Range<usize> {
        self.node(self.nx, 0)..self.node_count()
    }

    pub fn free_count(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Global node indices of element `(i, j)` in counter-clockwise order.
    fn element_nodes(&self, i: usize, j: usize) -> [usize; 4] {
        [self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)]
    }

    /// Bilinear interpolant of a full nodal vector at `(x, y)`; points within
    /// `1e-12·h` of a grid line snap onto it.
    pub fn interpolate(&self, values: &[Complex64], x: f64, y: f64) -> Complex64 {
        let locate = |t: f64, h: f64, n: usize| -> (usize, f64) {
            let s = (t / h).clamp(0.0, n as f64);
            let r = s.round();
            let s = if (s - r).abs() < 1e-12 { r } else { s };
            let i = (s.floor() as usize).min(n - 1);
            (i, s - i as f64)
        };
        let (i, fx) = locate(x, self.hx, self.nx);
        let (j, fy) = locate(y, self.hy, self.ny);
        let n = self.element_nodes(i, j);
        values[n[0]] * ((1.0 - fx) * (1.0 - fy))
            + values[n[1]] * (fx * (1.0 - fy))
            + values[n[2]] * (fx * fy)
            + values[n[3]] * ((1.0 - fx) * fy)
    }
}

/// Source `f(x, y) = amplitude · exp(-γ (x - x0)²) · Φ_mode(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub mode: usize,
    pub x0: f64,
    pub gamma: f64,
    pub amplitude: Complex64,
}

impl SourceSpec {
    pub fn axial_profile(&self, x: f64) -> Complex64 {
        self.amplitude * (-self.gamma * (x - self.x0).powi(2)).exp()
    }

    pub fn eval(&self, basis: &ModalBasis, x: f64, y: f64) -> Complex64 {
        self.axial_profile(x) * basis.eval(self.mode, y)
    }

    /// Right end of the effective support, `x0 + 4/sqrt(γ)`.
    pub fn support_end(&self) -> f64 {
        self.x0 + 4.0 / self.gamma.sqrt()
    }

    /// Interval outside which the profile is below `e^{-40}` of its peak.
    pub fn quadrature_support(&self) -> (f64, f64) {
        let half = (40.0 / self.gamma).sqrt();
        ((self.x0 - half).max(0.0), self.x0 + half)
    }

    pub fn validate(&self, basis: &ModalBasis, pml_start: f64) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(PmlError::InvalidParameter(format!("source width gamma = {} must be > 0", self.gamma)));
        }
        if self.mode >= basis.len() {
            return Err(PmlError::InvalidParameter(format!(
                "source mode {} not in a basis of {} modes",
                self.mode,
                basis.len()
            )));
        }
        if !(self.support_end() < pml_start) {
            return Err(PmlError::InvalidParameter(format!(
                "source support end {:.4} reaches the layer start r = {pml_start}",
                self.support_end()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Gauss points per direction.
    pub quad_order: usize,
    pub eliminate_dirichlet: bool,
    pub exec: Exec,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { quad_order: 2, eliminate_dirichlet: true, exec: Exec::default() }
    }
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: ComplexSparse,
    /// `sqrt(det g_λ)` at every quadrature point, element-major.
    pub mass_weight: Vec<Complex64>,
    pub mu0: f64,
    pub free_count: usize,
    pub mesh: Mesh,
    pub pml_start: f64,
    pub quad_order: usize,
}

struct QuadRule {
    points: Vec<(f64, f64, f64)>,
}

impl QuadRule {
    fn tensor(order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut points = Vec::with_capacity(order * order);
        for (xi, wi) in x.iter().zip(&w) {
            for (eta, wj) in x.iter().zip(&w) {
                points.push((*xi, *eta, wi * wj));
            }
        }
        QuadRule { points }
    }
}

/// Bilinear shape functions and reference gradients at `(ξ, η) ∈ [-1, 1]²`.
fn shape(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    const SX: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
    const SY: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
    let mut n = [0.0; 4];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        n[a] = 0.25 * (1.0 + SX[a] * xi) * (1.0 + SY[a] * eta);
        g[a] = [0.25 * SX[a] * (1.0 + SY[a] * eta), 0.25 * SY[a] * (1.0 + SX[a] * xi)];
    }
    (n, g)
}

pub fn assemble_system(mesh: &Mesh, field: &MetricField, spec: &PmlSpec, mu0: f64) -> Result<AssembledSystem> {
    assemble_system_with(mesh, field, spec, mu0, AssemblyOptions::default())
}

pub fn assemble_system_with(
    mesh: &Mesh,
    field: &MetricField,
    spec: &PmlSpec,
    mu0: f64,
    options: AssemblyOptions,
) -> Result<AssembledSystem> {
    spec.validate()?;
    if (field.cross_section().length() - mesh.width).abs() > 1e-12 * mesh.width {
        return Err(PmlError::InvalidParameter("mesh width differs from the cross-section length".into()));
    }
    let rule = QuadRule::tensor(options.quad_order.max(1));
    let nq = rule.points.len();
    let jac = 0.25 * mesh.hx * mesh.hy;
    let (dxi, deta) = (2.0 / mesh.hx, 2.0 / mesh.hy);

    let locals = options.exec.map_range(mesh.element_count(), |e| -> Result<([Complex64; 16], Vec<Complex64>)> {
        let (i, j) = (e / mesh.ny, e % mesh.ny);
        let (x0, y0) = (mesh.x(i), mesh.y(j));
        let mut k = [ZERO; 16];
        let mut weights = Vec::with_capacity(nq);
        for &(xi, eta, w) in &rule.points {
            let x = x0 + 0.5 * (xi + 1.0) * mesh.hx;
            let y = y0 + 0.5 * (eta + 1.0) * mesh.hy;
            let g = deformed_metric(field, spec, x, y)?;
            let sd = g.sqrt_det;
            weights.push(sd);
            let (n, dn) = shape(xi, eta);
            let grads: [[f64; 2]; 4] = std::array::from_fn(|a| [dn[a][0] * dxi, dn[a][1] * deta]);
            let wj = w * jac;
            for a in 0..4 {
                for b in a..4 {
                    let (ga, gb) = (grads[a], grads[b]);
                    let stiff = g.inv[0] * (ga[0] * gb[0])
                        + g.inv[1] * (ga[0] * gb[1] + ga[1] * gb[0])
                        + g.inv[2] * (ga[1] * gb[1]);
                    let v = sd * (stiff - mu0 * n[a] * n[b]) * wj;
                    k[a * 4 + b] += v;
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                k[a * 4 + b] = k[b * 4 + a];
            }
        }
        Ok((k, weights))
    });

    let free = if options.eliminate_dirichlet { mesh.free_count() } else { mesh.node_count() };
    let mut triplets = Vec::with_capacity(16 * mesh.element_count());
    let mut mass_weight = Vec::with_capacity(nq * mesh.element_count());
    for (e, local) in locals.into_iter().enumerate() {
        let (k, weights) = local?;
        mass_weight.extend(weights);
        let nodes = mesh.element_nodes(e / mesh.ny, e % mesh.ny);
        for a in 0..4 {
            if nodes[a] >= free {
                continue;
            }
            for b in 0..4 {
                if nodes[b] < free {
                    triplets.push((nodes[a], nodes[b], k[a * 4 + b]));
                }
            }
        }
    }
    let matrix = ComplexSparse::from_triplets(free, triplets, true)?;
    Ok(AssembledSystem {
        matrix,
        mass_weight,
        mu0,
        free_count: free,
        mesh: mesh.clone(),
        pml_start: spec.r,
        quad_order: options.quad_order.max(1),
    })
}

impl AssembledSystem {
    /// Pads a free-dof vector with the Dirichlet zeros.
    pub fn expand(&self, free: &[Complex64]) -> Vec<Complex64> {
        let mut full = vec![ZERO; self.mesh.node_count()];
        full[..free.len()].copy_from_slice(free);
        full
    }

    /// Load vector `∫ sqrt(det g) f φ_a` with the quadrature of the matrix.
    pub fn assemble_rhs(&self, sources: &[SourceSpec], basis: &ModalBasis) -> Vec<Complex64> {
        for s in sources {
            if s.support_end() >= self.pml_start {
                log::warn!(
                    "source at x0 = {} extends to {:.3}, past the layer start {}; the load is not deformed",
                    s.x0,
                    s.support_end(),
                    self.pml_start
                );
            }
        }
        let mesh = &self.mesh;
        let rule = QuadRule::tensor(self.quad_order);
        let nq = rule.points.len();
        let jac = 0.25 * mesh.hx * mesh.hy;
        let mut b = vec![ZERO; self.free_count];
        if sources.iter().all(|s| s.amplitude == ZERO) {
            return b;
        }
        for e in 0..mesh.element_count() {
            let (i, j) = (e / mesh.ny, e % mesh.ny);
            let (x0, y0) = (mesh.x(i), mesh.y(j));
            let xmid = x0 + 0.5 * mesh.hx;
            if sources.iter().all(|s| {
                let (lo, hi) = s.quadrature_support();
                xmid + mesh.hx < lo || xmid - mesh.hx > hi
            }) {
                continue;
            }
            let nodes = mesh.element_nodes(i, j);
            let mut local = [ZERO; 4];
            for (q, &(xi, eta, w)) in rule.points.iter().enumerate() {
                let x = x0 + 0.5 * (xi + 1.0) * mesh.hx;
                let y = y0 + 0.5 * (eta + 1.0) * mesh.hy;
                let f: Complex64 = sources.iter().map(|s| s.eval(basis, x, y)).sum();
                let (n, _) = shape(xi, eta);
                let v = self.mass_weight[e * nq + q] * f * (w * jac);
                for a in 0..4 {
                    local[a] += v * n[a];
                }
            }
            for a in 0..4 {
                if nodes[a] < self.free_count {
                    b[nodes[a]] += local[a];
                }
            }
        }
        b
    }
}

/// Flat-measure `L²` norm and `H¹` seminorm of the bilinear interpolant of a
/// full nodal vector over the elements inside `[x_lo, x_hi] × [0, L_y]`.
pub fn discrete_norms(mesh: &Mesh, values: &[Complex64], window: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = window;
    if values.len() != mesh.node_count() {
        return Err(PmlError::InvalidParameter(format!(
            "nodal vector of length {} on a mesh with {} nodes",
            values.len(),
            mesh.node_count()
        )));
    }
    if !(lo >= -1e-12 && hi <= mesh.length + 1e-12 && hi > lo) {
        return Err(PmlError::EmptyWindow(lo, hi));
    }
    let eps = 1e-9 * mesh.hx;
    let first = ((lo - eps) / mesh.hx).ceil().max(0.0) as usize;
    let last = (((hi + eps) / mesh.hx).floor() as usize).min(mesh.nx);
    if last <= first {
        return Err(PmlError::EmptyWindow(lo, hi));
    }
    let rule = QuadRule::tensor(2);
    let jac = 0.25 * mesh.hx * mesh.hy;
    let (dxi, deta) = (2.0 / mesh.hx, 2.0 / mesh.hy);
    let (mut l2, mut h1) = (0.0, 0.0);
    for i in first..last {
        for j in 0..mesh.ny {
            let nodes = mesh.element_nodes(i, j);
            for &(xi, eta, w) in &rule.points {
                let (n, dn) = shape(xi, eta);
                let mut u = ZERO;
                let mut gx = ZERO;
                let mut gy = ZERO;
                for a in 0..4 {
                    let v = values[nodes[a]];
                    u += v * n[a];
                    gx += v * (dn[a][0] * dxi);
                    gy += v * (dn[a][1] * deta);
                }
                l2 += w * jac * u.norm_sqr();
                h1 += w * jac * (gx.norm_sqr() + gy.norm_sqr());
            }
        }
    }
    Ok((l2.sqrt(), h1.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{neumann_eigenpairs, CrossSection};
    use crate::geometry::Preset;
    use crate::quadrature::gauss_legendre;
    use crate::sparse::dense_eig_small;
    use std::f64::consts::PI;

    fn flat_field() -> MetricField {
        MetricField::straight(CrossSection::flat(1.0).unwrap())
    }

    fn spec(lambda: Complex64) -> PmlSpec {
        PmlSpec::new(6.0, 2.0, lambda, 0.45).unwrap()
    }

    #[test]
    fn mesh_counts() {
        let m = build_mesh(10.0, 4, 8, 1.0).unwrap();
        assert_eq!((m.nx + 1, m.ny + 1), (41, 9));
        assert_eq!(m.dirichlet_nodes().len(), 9);
        let m = build_mesh(14.0, 40, 40, 1.0).unwrap();
        assert_eq!((m.nx + 1, m.ny + 1), (561, 41));
        assert_eq!(m.node_count(), 561 * 41);
        assert!(build_mesh(10.0, 2, 8, 1.0).is_err());
        assert!(matches!(build_mesh_with_budget(10.0, 40, 40, 1.0, 1000), Err(PmlError::Resource { .. })));
        assert!(build_mesh(10.0, 4, 100, 1.0).is_err());
    }

    #[test]
    fn constants_in_kernel_without_dirichlet() {
        let m = build_mesh(4.0, 4, 4, 1.0).unwrap();
        let opts = AssemblyOptions { eliminate_dirichlet: false, ..Default::default() };
        let s = assemble_system_with(&m, &flat_field(), &spec(Complex64::new(0.0, 0.0)), 0.0, opts).unwrap();
        for i in 0..s.matrix.dim() {
            let sum: Complex64 = s.matrix.row(i).map(|(_, v)| v).sum();
            assert!(sum.norm() < 1e-13);
        }
        assert!(s.matrix.is_real());
    }

    #[test]
    fn laplacian_with_dirichlet_is_positive_and_matches_cavity_spectrum() {
        // 9 x 5 nodes: R = 2, nx = 8, ny = 4, L_y = 1
        let m = build_mesh(2.0, 4, 4, 1.0).unwrap();
        assert_eq!((m.nx + 1, m.ny + 1), (9, 5));
        let s = assemble_system(&m, &flat_field(), &spec(Complex64::new(0.0, 0.0)), 0.0).unwrap();
        let stiff = dense_eig_small(&s.matrix, 1000).unwrap();
        assert!(stiff.iter().all(|e| e.re > 0.0 && e.im == 0.0));

        // Generalized problem K u = θ M u through the mass matrix (μ0 = -1 shift):
        // M = K - A(-1), eigenvalues of M^{-1}K approximate nu_j + ((m+1/2)π/R)².
        let shifted = assemble_system(&m, &flat_field(), &spec(Complex64::new(0.0, 0.0)), -1.0).unwrap();
        let k = s.matrix.to_dense().map(|z| z.re);
        let mass = shifted.matrix.to_dense().map(|z| z.re) - &k;
        let chol = mass.clone().cholesky().unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let sym = &linv * &k * linv.transpose();
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let mut exact: Vec<f64> = Vec::new();
        for jy in 0..3 {
            for mx in 0..3 {
                exact.push((jy as f64 * PI).powi(2) + ((mx as f64 + 0.5) * PI / 2.0).powi(2));
            }
        }
        exact.sort_by(f64::total_cmp);
        for q in 0..3 {
            assert!((ev[q] - exact[q]).abs() / exact[q] < 0.06, "{} vs {}", ev[q], exact[q]);
        }
    }

    #[test]
    fn system_is_complex_symmetric_for_all_presets() {
        let m = build_mesh(12.0, 4, 4, 1.0).unwrap();
        let cs = CrossSection::flat(1.0).unwrap();
        let presets = [
            MetricField::straight(cs.clone()),
            MetricField::new(Preset::Bent { a: 1.0, b_exp: 0.5, g_exp: -1.0 }, cs.clone(), 0.45).unwrap(),
            MetricField::new(Preset::Stretched, cs, 0.45).unwrap(),
        ];
        for f in &presets {
            for lambda in [Complex64::new(0.0, 0.4), Complex64::new(0.2, -0.3), Complex64::new(0.35, 0.0)] {
                let s = assemble_system(&m, f, &spec(lambda), 20.0).unwrap();
                assert!(s.matrix.symmetry_defect() <= 1e-13);
                assert!(s.matrix.is_symmetric());
            }
        }
    }

    #[test]
    fn parallel_and_sequential_assembly_agree_bitwise() {
        let m = build_mesh(12.0, 8, 6, 1.0).unwrap();
        let f = flat_field();
        let p = spec(Complex64::new(0.0, 0.4));
        let a = assemble_system_with(&m, &f, &p, 20.0, AssemblyOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let b = assemble_system_with(&m, &f, &p, 20.0, AssemblyOptions { exec: Exec::Parallel, ..Default::default() }).unwrap();
        assert_eq!(crate::sparse::format_entries(&a.matrix), crate::sparse::format_entries(&b.matrix));
    }

    #[test]
    fn rhs_zero_amplitude_and_constant_mode() {
        let m = build_mesh(10.0, 8, 6, 1.0).unwrap();
        let basis = neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap();
        let s = assemble_system(&m, &flat_field(), &spec(Complex64::new(0.0, 0.4)), 20.0).unwrap();
        let zero = SourceSpec { mode: 0, x0: 3.0, gamma: 4.0, amplitude: ZERO };
        assert!(s.assemble_rhs(&[zero], &basis).iter().all(|v| *v == ZERO));

        let src = SourceSpec { mode: 0, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) };
        let b = s.assemble_rhs(&[src], &basis);
        for i in 1..m.nx {
            // interior y nodes carry twice the boundary load, all equal
            let inner = b[m.node(i, 1)];
            for j in 1..m.ny {
                assert!((b[m.node(i, j)] - inner).norm() <= 1e-14 * inner.norm().max(1e-300));
            }
            assert!((b[m.node(i, 0)] * 2.0 - inner).norm() <= 1e-14 * inner.norm().max(1e-300));
        }
    }

    #[test]
    fn rhs_matches_high_order_quadrature_oracle() {
        let m = build_mesh(10.0, 64, 64, 1.0).unwrap();
        let basis = neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap();
        let s = assemble_system(&m, &flat_field(), &spec(Complex64::new(0.0, 0.4)), 20.0).unwrap();
        let src = SourceSpec { mode: 1, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) };
        let b = s.assemble_rhs(&[src], &basis);

        // Oracle: 12-point Gauss per direction on each element, hat functions written out.
        let (gx, gw) = gauss_legendre(12);
        let mut oracle = vec![0.0f64; m.free_count()];
        for i in 0..m.nx {
            for j in 0..m.ny {
                let (xa, ya) = (i as f64 * m.hx, j as f64 * m.hy);
                for (p, wp) in gx.iter().zip(&gw) {
                    for (q, wq) in gx.iter().zip(&gw) {
                        let x = xa + 0.5 * (p + 1.0) * m.hx;
                        let y = ya + 0.5 * (q + 1.0) * m.hy;
                        let f = (-4.0 * (x - 3.0f64).powi(2)).exp() * 2f64.sqrt() * (PI * y).cos();
                        let w = wp * wq * 0.25 * m.hx * m.hy * f;
                        let (tx, ty) = ((x - xa) / m.hx, (y - ya) / m.hy);
                        let hats = [(i, j, (1.0 - tx) * (1.0 - ty)), (i + 1, j, tx * (1.0 - ty)), (i + 1, j + 1, tx * ty), (i, j + 1, (1.0 - tx) * ty)];
                        for (ii, jj, h) in hats {
                            let node = ii * (m.ny + 1) + jj;
                            if ii < m.nx {
                                oracle[node] += w * h;
                            }
                        }
                    }
                }
            }
        }
        let diff: f64 = b.iter().zip(&oracle).map(|(u, v)| (u.re - v).powi(2) + u.im.powi(2)).sum::<f64>().sqrt();
        let norm: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-8, "relative difference {}", diff / norm);
    }

    #[test]
    fn norms_of_simple_functions() {
        let m = build_mesh(3.0, 20, 20, 1.0).unwrap();
        let fill = |f: &dyn Fn(f64, f64) -> f64| -> Vec<Complex64> {
            (0..m.node_count()).map(|n| { let (x, y) = m.coords(n); Complex64::new(f(x, y), 0.0) }).collect()
        };
        let (l2, h1) = discrete_norms(&m, &fill(&|_, _| 1.0), (0.0, 1.0)).unwrap();
        assert!((l2 - 1.0).abs() < 1e-13 && h1.abs() < 1e-13);
        let (_, h1) = discrete_norms(&m, &fill(&|x, _| x), (0.0, 1.0)).unwrap();
        assert!((h1 - 1.0).abs() < 1e-13);
        let (l2, _) = discrete_norms(&m, &fill(&|_, y| (PI * y).cos()), (0.0, 1.0)).unwrap();
        assert!((l2 - 0.5f64.sqrt()).abs() < 3e-3);
        assert!(matches!(discrete_norms(&m, &fill(&|_, _| 1.0), (1.0, 1.01)), Err(PmlError::EmptyWindow(..))));
        assert!(discrete_norms(&m, &fill(&|_, _| 1.0), (2.0, 4.0)).is_err());
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let m = build_mesh(2.0, 8, 5, 1.0).unwrap();
        let v: Vec<Complex64> = (0..m.node_count()).map(|n| { let (x, y) = m.coords(n); Complex64::new(1.0 + 2.0 * x - y + 0.5 * x * y, x) }).collect();
        for &(x, y) in &[(0.0, 0.0), (0.33, 0.71), (2.0, 1.0), (1.25, 0.4)] {
            let u = m.interpolate(&v, x, y);
            assert!((u - Complex64::new(1.0 + 2.0 * x - y + 0.5 * x * y, x)).norm() < 1e-13);
        }
    }

    #[test]
    fn source_support_validation() {
        let basis = neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap();
        let ok = SourceSpec { mode: 1, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) };
        assert!(ok.validate(&basis, 6.0).is_ok());
        assert!(ok.validate(&basis, 4.5).is_err());
        assert!(SourceSpec { mode: 5, ..ok }.validate(&basis, 6.0).is_err());
    }
}
