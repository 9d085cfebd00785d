//! Spectral data of the 1-D cross-section `[0, L_y]` with transverse metric
//! coefficient `h(y)`: Neumann eigenpairs of the Laplace–Beltrami operator
//! `-h^{-1/2} d/dy (h^{-1/2} d/dy)`, axial wavenumbers `sqrt(mu0 - nu)` and
//! the decay-rate bound of the layer.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::{PmlError, Result};

/// Closest distance allowed between `mu0` and any threshold.
pub const THRESHOLD_TOL: f64 = 1e-8;

/// Default node count of the finite-difference grid for non-constant weights.
pub const DEFAULT_GRID_NODES: usize = 2001;

const POSITIVITY_SAMPLES: usize = 2001;

/// Transverse metric coefficient `h(y)`.
#[derive(Clone)]
pub enum WeightProfile {
    Flat,
    /// `h(y) = c[0] + c[1] y + c[2] y^2 + ...`
    Polynomial(Vec<f64>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for WeightProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightProfile::Flat => write!(f, "Flat"),
            WeightProfile::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            WeightProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl WeightProfile {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            WeightProfile::Flat => 1.0,
            WeightProfile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * y + ci),
            WeightProfile::Custom(f) => f(y),
        }
    }

    /// The constant value when the profile does not depend on `y`.
    pub fn constant(&self) -> Option<f64> {
        match self {
            WeightProfile::Flat => Some(1.0),
            WeightProfile::Polynomial(c) => {
                if c.iter().skip(1).all(|&v| v == 0.0) {
                    Some(c.first().copied().unwrap_or(0.0))
                } else {
                    None
                }
            }
            WeightProfile::Custom(_) => None,
        }
    }

    pub fn is_flat(&self) -> bool {
        self.constant() == Some(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct CrossSection {
    length: f64,
    weight: WeightProfile,
}

impl CrossSection {
    pub fn new(length: f64, weight: WeightProfile) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(PmlError::InvalidCrossSection(format!(
                "length must be positive, got {length}"
            )));
        }
        for i in 0..POSITIVITY_SAMPLES {
            let y = length * i as f64 / (POSITIVITY_SAMPLES - 1) as f64;
            let h = weight.eval(y);
            if !(h.is_finite() && h > 0.0) {
                return Err(PmlError::InvalidCrossSection(format!(
                    "weight profile must be positive and finite, h({y}) = {h}"
                )));
            }
        }
        Ok(CrossSection { length, weight })
    }

    pub fn flat(length: f64) -> Result<Self> {
        Self::new(length, WeightProfile::Flat)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn weight(&self) -> &WeightProfile {
        &self.weight
    }

    /// Volume density `sqrt(h(y))` of the transverse metric.
    pub fn density(&self, y: f64) -> f64 {
        self.weight.eval(y).sqrt()
    }
}

#[derive(Debug, Clone)]
pub enum ModeShape {
    Cosine { amplitude: f64, wavenumber: f64 },
    /// Nodal values on a uniform grid over `[0, L_y]`, linearly interpolated.
    Tabulated { spacing: f64, values: Arc<Vec<f64>> },
}

impl ModeShape {
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ModeShape::Cosine { amplitude, wavenumber } => amplitude * (wavenumber * y).cos(),
            ModeShape::Tabulated { spacing, values } => {
                let last = values.len() - 1;
                let t = (y / spacing).clamp(0.0, last as f64);
                let i = (t.floor() as usize).min(last - 1);
                let f = t - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }
}

/// Neumann eigenpairs `(nu_j, Phi_j)` in ascending order, orthonormal in
/// `L^2([0, L_y], sqrt(h) dy)`.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    eigenvalues: Vec<f64>,
    shapes: Vec<ModeShape>,
    cross_section: CrossSection,
}

impl ModalBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    pub fn shape(&self, j: usize) -> &ModeShape {
        &self.shapes[j]
    }

    pub fn eval(&self, j: usize, y: f64) -> f64 {
        self.shapes[j].eval(y)
    }

    pub fn cross_section(&self) -> &CrossSection {
        &self.cross_section
    }
}

pub fn neumann_eigenpairs(cs: &CrossSection, n: usize) -> Result<ModalBasis> {
    neumann_eigenpairs_on_grid(cs, n, DEFAULT_GRID_NODES)
}

/// Like [`neumann_eigenpairs`] with an explicit finite-difference grid size
/// (ignored for constant weights, which use closed forms).
pub fn neumann_eigenpairs_on_grid(cs: &CrossSection, n: usize, nodes: usize) -> Result<ModalBasis> {
    if n == 0 {
        return Err(PmlError::InvalidParameter("need at least one mode".into()));
    }
    let l = cs.length();
    if let Some(c) = cs.weight().constant() {
        let scale = l * c.sqrt();
        let eigenvalues = (0..n).map(|j| (j as f64 * PI / l).powi(2) / c).collect();
        let shapes = (0..n)
            .map(|j| ModeShape::Cosine {
                amplitude: if j == 0 { (1.0 / scale).sqrt() } else { (2.0 / scale).sqrt() },
                wavenumber: j as f64 * PI / l,
            })
            .collect();
        return Ok(ModalBasis { eigenvalues, shapes, cross_section: cs.clone() });
    }
    if nodes < n + 2 || nodes < 3 {
        return Err(PmlError::InvalidParameter(format!(
            "grid of {nodes} nodes cannot resolve {n} modes"
        )));
    }
    sturm_liouville_modes(cs, n, nodes)
}

/// Second-order finite differences for `-(p u')' = nu w u` with `p = h^{-1/2}`,
/// `w = h^{1/2}` and Neumann ghost points; the half-cell boundary rows make the
/// pencil symmetric with a diagonal mass.
fn sturm_liouville_modes(cs: &CrossSection, n: usize, nodes: usize) -> Result<ModalBasis> {
    let l = cs.length();
    let d = l / (nodes - 1) as f64;
    let w = cs.weight();
    let flux: Vec<f64> = (0..nodes - 1)
        .map(|i| 1.0 / w.eval((i as f64 + 0.5) * d).sqrt() / d)
        .collect();
    let mass: Vec<f64> = (0..nodes)
        .map(|i| {
            let half = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
            half * d * w.eval(i as f64 * d).sqrt()
        })
        .collect();
    // Symmetric scaling M^{-1/2} K M^{-1/2}.
    let diag: Vec<f64> = (0..nodes)
        .map(|i| {
            let left = if i > 0 { flux[i - 1] } else { 0.0 };
            let right = if i + 1 < nodes { flux[i] } else { 0.0 };
            (left + right) / mass[i]
        })
        .collect();
    let off: Vec<f64> = (0..nodes - 1)
        .map(|i| -flux[i] / (mass[i] * mass[i + 1]).sqrt())
        .collect();
    let tri = SymTridiagonal { diag, off };

    let mut eigenvalues = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for k in 0..n {
        let nu = tri.kth_eigenvalue(k);
        let v = tri.eigenvector(nu);
        let mut phi: Vec<f64> = v.iter().zip(&mass).map(|(vi, m)| vi / m.sqrt()).collect();
        let norm = phi.iter().zip(&mass).map(|(p, m)| p * p * m).sum::<f64>().sqrt();
        let sign = if phi[0] < 0.0 { -1.0 } else { 1.0 };
        phi.iter_mut().for_each(|p| *p *= sign / norm);
        eigenvalues.push(nu);
        shapes.push(ModeShape::Tabulated { spacing: d, values: Arc::new(phi) });
    }
    for k in 1..n {
        if eigenvalues[k] <= eigenvalues[k - 1] {
            return Err(PmlError::InvalidCrossSection(
                "eigenvalues not strictly increasing; refine the grid".into(),
            ));
        }
    }
    // The constant vector spans the kernel of K exactly.
    if eigenvalues[0].abs() < 1e-9 {
        eigenvalues[0] = 0.0;
    }
    Ok(ModalBasis { eigenvalues, shapes, cross_section: cs.clone() })
}

struct SymTridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl SymTridiagonal {
    /// Number of eigenvalues strictly below `x` (Sturm sequence count).
    fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..self.diag.len() {
            let b2 = if i > 0 { self.off[i - 1] * self.off[i - 1] } else { 0.0 };
            d = self.diag[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (self.diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.diag.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    fn kth_eigenvalue(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        let scale = lo.abs().max(hi.abs()).max(1.0);
        while hi - lo > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration with a slightly perturbed shift.
    fn eigenvector(&self, nu: f64) -> Vec<f64> {
        let n = self.diag.len();
        let shift = nu + 1e-10 * nu.abs().max(1.0);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
        for _ in 0..4 {
            v = self.solve_shifted(shift, &v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Solves `(T - shift I) x = rhs` by Gaussian elimination with partial pivoting.
    fn solve_shifted(&self, shift: f64, rhs: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        let mut dl: Vec<f64> = self.off.clone();
        let mut d: Vec<f64> = self.diag.iter().map(|a| a - shift).collect();
        let mut du: Vec<f64> = self.off.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut b = rhs.to_vec();
        let tiny = f64::EPSILON * self.gershgorin().1.abs().max(1.0);
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    d[i] = tiny;
                }
                let m = dl[i] / d[i];
                d[i + 1] -= m * du[i];
                b[i + 1] -= m * b[i];
                if i + 2 < n {
                    du2[i] = 0.0;
                }
            } else {
                let m = d[i] / dl[i];
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - m * tmp;
                du[i] = tmp;
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -m * du2[i];
                }
                b.swap(i, i + 1);
                b[i + 1] -= m * b[i];
            }
            dl[i] = 0.0;
        }
        if d[n - 1] == 0.0 {
            d[n - 1] = tiny;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = b[n - 1] / d[n - 1];
        if n >= 2 {
            x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        x
    }
}

/// Principal square root `k = sqrt(mu0 - nu)` with `Im k >= 0`.
pub fn axial_wavenumber(mu0: f64, nu: f64) -> Result<Complex64> {
    let diff = mu0 - nu;
    if diff.abs() < THRESHOLD_TOL {
        return Err(PmlError::Threshold { mu0, nu });
    }
    Ok(if diff > 0.0 {
        Complex64::new(diff.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-diff).sqrt())
    })
}

/// Decay-rate bound `min_j |Im((1 + lambda) k_j)|` over the cross-section
/// spectrum.
///
/// For `nu > mu0` the candidate equals `Re(1 + lambda) sqrt(nu - mu0)`, which
/// grows with `nu`, so the enumeration stops at the first threshold above
/// `mu0`.
pub fn beta_max(mu0: f64, lambda: Complex64, basis: &ModalBasis) -> Result<f64> {
    if lambda.norm() >= std::f64::consts::FRAC_1_SQRT_2 {
        return Err(PmlError::InvalidLambda(format!(
            "|lambda| = {} must be below 1/sqrt(2)",
            lambda.norm()
        )));
    }
    let one_plus = Complex64::new(1.0, 0.0) + lambda;
    let mut best = f64::INFINITY;
    for &nu in basis.eigenvalues() {
        let k = axial_wavenumber(mu0, nu)?;
        let candidate = (one_plus * k).im.abs();
        best = best.min(candidate);
        if nu > mu0 {
            return Ok(best);
        }
    }
    Err(PmlError::InsufficientModes {
        mu0,
        modes: basis.len(),
        largest: basis.eigenvalues().last().copied().unwrap_or(0.0),
    })
}
