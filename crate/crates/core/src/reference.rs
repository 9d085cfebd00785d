//! Semi-analytic outgoing solutions in the straight cylinder.
//!
//! Each transverse mode decouples into `-u'' - k_j² u = f_j` on the half line
//! with `u'(0) = 0`, solved by the modal Green's function
//!
//! ```text
//! G(x, x') = (i / 2k) (e^{ik|x - x'|} + e^{ik(x + x')})
//! ```
//!
//! whose image term enforces the Neumann wall. With `Im k >= 0` the solution
//! is outgoing (`e^{+ikx}`) to the right of the source.

use num_complex::Complex64;

use crate::assembly::{Mesh, SourceSpec};
use crate::cross_section::{axial_wavenumber, ModalBasis};
use crate::exec::Exec;
use crate::quadrature::integrate_adaptive;
use crate::{PmlError, Result};

pub const GREEN_REL_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// `u(x) = ∫₀^∞ G(x, x') f(x') dx'` at each point of `x_eval`, for a profile
/// supported in `support = (lo, hi)` with `0 <= lo < hi`.
pub fn modal_green_solution<F>(
    k: Complex64,
    profile: F,
    support: (f64, f64),
    x_eval: &[f64],
    exec: Exec,
) -> Result<Vec<Complex64>>
where
    F: Fn(f64) -> Complex64 + Sync,
{
    if k.norm() < 1e-8 {
        return Err(PmlError::WavenumberThreshold(k));
    }
    if k.im < 0.0 {
        return Err(PmlError::InvalidParameter(format!("wavenumber {k} has negative imaginary part")));
    }
    let (lo, hi) = (support.0.max(0.0), support.1);
    if !(hi > lo) {
        return Err(PmlError::InvalidParameter(format!("empty source support [{lo}, {hi}]")));
    }
    let abs_tol = 1e-300;
    let plus = |t: f64| (I * k * t).exp() * profile(t);
    let minus = |t: f64| (-I * k * t).exp() * profile(t);
    let pref = I / (2.0 * k);
    let image = integrate_adaptive(plus, lo, hi, GREEN_REL_TOL, abs_tol);
    let left_total = integrate_adaptive(minus, lo, hi, GREEN_REL_TOL, abs_tol);

    Ok(exec.map(x_eval, |&x| {
        // ∫ e^{ik|x - t|} f = e^{ikx} ∫_{t<x} e^{-ikt} f + e^{-ikx} ∫_{t>x} e^{ikt} f
        let (below, above) = if x >= hi {
            (left_total, ZERO)
        } else if x <= lo {
            (ZERO, image)
        } else {
            (
                integrate_adaptive(minus, lo, x, GREEN_REL_TOL, abs_tol),
                integrate_adaptive(plus, x, hi, GREEN_REL_TOL, abs_tol),
            )
        };
        let e = (I * k * x).exp();
        let direct = if above == ZERO { e * below } else { e * below + (-I * k * x).exp() * above };
        pref * (direct + e * image)
    }))
}

/// Modal expansion `u(x, y) = Σ_j u_j(x) Φ_j(y)` sampled on an axial grid.
#[derive(Debug, Clone)]
pub struct ModalField {
    pub xs: Vec<f64>,
    /// `amplitudes[j][i] = u_j(xs[i])`.
    pub amplitudes: Vec<Vec<Complex64>>,
    pub wavenumbers: Vec<Complex64>,
    pub basis: ModalBasis,
}

impl ModalField {
    pub fn value(&self, ix: usize, y: f64) -> Complex64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(j, u)| u[ix] * self.basis.eval(j, y))
            .sum()
    }

    /// Nodal vector on `mesh` matching the grid columns; the grid must be the
    /// leading mesh abscissae, nodes beyond it are left at zero.
    pub fn to_nodal(&self, mesh: &Mesh) -> Result<Vec<Complex64>> {
        if self.xs.len() > mesh.nx + 1 || self.xs.iter().enumerate().any(|(i, &x)| (x - mesh.x(i)).abs() > 1e-12) {
            return Err(PmlError::InvalidParameter("modal field grid is not a prefix of the mesh abscissae".into()));
        }
        let mut out = vec![ZERO; mesh.node_count()];
        for i in 0..self.xs.len() {
            for j in 0..=mesh.ny {
                out[mesh.node(i, j)] = self.value(i, mesh.y(j));
            }
        }
        Ok(out)
    }
}

/// Superposes the modal Green's solutions of all sources; each source excites
/// only its own mode.
pub fn reference_field(sources: &[SourceSpec], basis: &ModalBasis, mu0: f64, grid: &[f64], exec: Exec) -> Result<ModalField> {
    let n = basis.len();
    for s in sources {
        if s.mode >= n {
            return Err(PmlError::InvalidParameter(format!("source mode {} not in a basis of {n} modes", s.mode)));
        }
        if s.x0 - 4.0 / s.gamma.sqrt() < 0.0 {
            log::warn!("source at x0 = {} reaches the wall x = 0", s.x0);
        }
    }
    let mut amplitudes = Vec::with_capacity(n);
    let mut wavenumbers = Vec::with_capacity(n);
    for j in 0..n {
        let k = axial_wavenumber(mu0, basis.eigenvalue(j))?;
        wavenumbers.push(k);
        let active: Vec<&SourceSpec> = sources.iter().filter(|s| s.mode == j && s.amplitude != ZERO).collect();
        if active.is_empty() {
            amplitudes.push(vec![ZERO; grid.len()]);
            continue;
        }
        let lo = active.iter().map(|s| s.quadrature_support().0).fold(f64::INFINITY, f64::min);
        let hi = active.iter().map(|s| s.quadrature_support().1).fold(f64::NEG_INFINITY, f64::max);
        let profile = |x: f64| active.iter().map(|s| s.axial_profile(x)).sum::<Complex64>();
        amplitudes.push(modal_green_solution(k, profile, (lo, hi), grid, exec)?);
    }
    Ok(ModalField { xs: grid.to_vec(), amplitudes, wavenumbers, basis: basis.clone() })
}

/// Transverse projection `∫ u(x_i, y) Φ_j(y) sqrt(h) dy` of a full nodal
/// vector, one value per mesh column, by the trapezoid rule on the mesh nodes.
pub fn project_onto_mode(mesh: &Mesh, values: &[Complex64], basis: &ModalBasis, j: usize) -> Vec<Complex64> {
    let cs = basis.cross_section();
    let weights: Vec<f64> = (0..=mesh.ny)
        .map(|m| {
            let y = mesh.y(m);
            let end = if m == 0 || m == mesh.ny { 0.5 } else { 1.0 };
            end * mesh.hy * basis.eval(j, y) * cs.density(y)
        })
        .collect();
    (0..=mesh.nx)
        .map(|i| (0..=mesh.ny).map(|m| values[mesh.node(i, m)] * weights[m]).sum())
        .collect()
}

/// Eigenvalue of mode `j` for the bilinear discretization of the flat
/// transverse Neumann problem with spacing `hy` on `[0, width]`.
pub fn discrete_transverse_eigenvalue(j: usize, hy: f64, width: f64) -> f64 {
    let c = (j as f64 * std::f64::consts::PI * hy / width).cos();
    6.0 / (hy * hy) * (1.0 - c) / (2.0 + c)
}

/// Wavenumber `κ` of the discrete plane waves `e^{iκx}` of the bilinear
/// scheme along the axis, on the outgoing branch (`Im κ >= 0`, `Re κ >= 0`).
pub fn discrete_axial_wavenumber(mu0: f64, nu_h: f64, hx: f64) -> Complex64 {
    let q = nu_h - mu0;
    let a = -1.0 / hx + q * hx / 6.0;
    let b = 2.0 / hx + 4.0 * q * hx / 6.0;
    let kappa = Complex64::new(-b / (2.0 * a), 0.0).acos() / hx;
    if kappa.im < 0.0 || (kappa.im == 0.0 && kappa.re < 0.0) {
        -kappa
    } else {
        kappa
    }
}

/// Splits modal amplitudes measured at stations `x1 < x2` into outgoing and
/// incoming parts `c⁺ e^{ikx} + c⁻ e^{-ikx}`, one pair per mode.
pub fn mode_amplitudes(
    x1: f64,
    u1: &[Complex64],
    x2: f64,
    u2: &[Complex64],
    wavenumbers: &[Complex64],
) -> Result<Vec<(Complex64, Complex64)>> {
    if !(x2 > x1) || u1.len() != wavenumbers.len() || u2.len() != wavenumbers.len() {
        return Err(PmlError::InvalidParameter("stations must satisfy x1 < x2 with one value per mode".into()));
    }
    wavenumbers
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let d = x2 - x1;
            if (k * d).sin().norm() < 0.1 {
                let step = std::f64::consts::FRAC_PI_2 / k.re.abs().max(k.norm()).max(1e-12);
                return Err(PmlError::Station { mode: j, x1, x2, suggested_x2: x1 + step });
            }
            let (p1, m1) = ((I * k * x1).exp(), (-I * k * x1).exp());
            let (p2, m2) = ((I * k * x2).exp(), (-I * k * x2).exp());
            let det = p1 * m2 - m1 * p2;
            Ok(((u1[j] * m2 - m1 * u2[j]) / det, (p1 * u2[j] - u1[j] * p2) / det))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::build_mesh;
    use crate::cross_section::{neumann_eigenpairs, CrossSection};
    use std::f64::consts::PI;

    fn gaussian(x0: f64, gamma: f64) -> impl Fn(f64) -> Complex64 + Sync {
        move |x: f64| Complex64::new((-gamma * (x - x0).powi(2)).exp(), 0.0)
    }

    #[test]
    fn narrow_source_radiates_like_a_point_source() {
        let k = Complex64::new(20f64.sqrt(), 0.0);
        let gamma: f64 = 400.0;
        let half = (40.0 / gamma).sqrt();
        let xs = [8.0, 9.5, 11.0];
        let u = modal_green_solution(k, gaussian(3.0, gamma), (3.0 - half, 3.0 + half), &xs, Exec::Sequential).unwrap();
        let mass = (PI / gamma).sqrt();
        for (x, v) in xs.iter().zip(&u) {
            // point source plus its image, with the Gaussian's Fourier factor
            let smear = (-k.re * k.re / (4.0 * gamma)).exp();
            let expected = I / (2.0 * k) * mass * smear * ((I * k * (x - 3.0)).exp() + (I * k * (x + 3.0)).exp());
            assert!((v - expected).norm() < 1e-8 * expected.norm(), "{v} vs {expected}");
        }
        // phase advances with x
        let darg = (u[1] / u[0]).arg();
        let expected = (k.re * 1.5 + PI).rem_euclid(2.0 * PI) - PI;
        assert!((darg - expected).abs() < 1e-8);
    }

    #[test]
    fn evanescent_mode_decays_at_its_rate() {
        let kappa = (4.0 * PI * PI - 20.0f64).sqrt();
        let k = Complex64::new(0.0, kappa);
        let xs: Vec<f64> = (0..11).map(|i| 6.0 + 0.2 * i as f64).collect();
        let u = modal_green_solution(k, gaussian(3.0, 4.0), (0.0, 6.2), &xs, Exec::Sequential).unwrap();
        let n = xs.len() as f64;
        let ly: Vec<f64> = u.iter().map(|v| v.norm().ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ly).map(|(x, l)| (x - mx) * (l - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + kappa).abs() < 1e-6, "slope {slope}");
        assert!((slope + 4.4134).abs() < 1e-4);
    }

    #[test]
    fn neumann_wall_holds() {
        for k in [Complex64::new(3.1828, 0.0), Complex64::new(0.0, 4.4134), Complex64::new(2.0, 0.5)] {
            let h = 1e-4;
            let u = modal_green_solution(k, gaussian(1.0, 4.0), (0.0, 4.2), &[0.0, h, 2.0 * h], Exec::Sequential).unwrap();
            let d = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
            assert!(d.norm() < 1e-6, "u'(0) = {d}");
        }
    }

    #[test]
    fn green_identity_by_finite_differences() {
        let k = Complex64::new(3.1828, 0.0);
        let f = gaussian(3.0, 4.0);
        let mut last = f64::INFINITY;
        for h in [1e-2, 5e-3] {
            let xs: Vec<f64> = (0..=4).map(|i| 2.0 + (i as f64 - 2.0) * h + 0.7).collect();
            let u = modal_green_solution(k, &f, (0.0, 6.2), &xs, Exec::Sequential).unwrap();
            let lap = -(u[1] - 2.0 * u[2] + u[3]) / (h * h) - k * k * u[2];
            let err = (lap - f(xs[2])).norm();
            assert!(err < last / 3.0);
            last = err;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn threshold_and_branch_errors() {
        let f = gaussian(3.0, 4.0);
        assert!(matches!(
            modal_green_solution(Complex64::new(1e-9, 0.0), &f, (0.0, 6.0), &[1.0], Exec::Sequential),
            Err(PmlError::WavenumberThreshold(_))
        ));
        assert!(modal_green_solution(Complex64::new(1.0, -0.1), &f, (0.0, 6.0), &[1.0], Exec::Sequential).is_err());
    }

    #[test]
    fn reference_field_is_separable_and_projects_back() {
        let basis = neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap();
        let mesh = build_mesh(6.0, 8, 64, 1.0).unwrap();
        let grid: Vec<f64> = (0..=mesh.nx).map(|i| mesh.x(i)).collect();
        let src = SourceSpec { mode: 1, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) };
        let field = reference_field(&[src], &basis, 20.0, &grid, Exec::Parallel).unwrap();
        assert!(field.amplitudes[0].iter().chain(&field.amplitudes[2]).all(|v| *v == ZERO));
        let nodal = field.to_nodal(&mesh).unwrap();
        for i in [0, 10, 30] {
            let ratio = nodal[mesh.node(i, 5)] / field.amplitudes[1][i];
            assert!((ratio.re - basis.eval(1, mesh.y(5))).abs() < 1e-12 && ratio.im.abs() < 1e-12);
        }
        // the trapezoid rule is exact for cos·cos on a uniform grid
        for j in 0..3 {
            let proj = project_onto_mode(&mesh, &nodal, &basis, j);
            for i in 0..=mesh.nx {
                assert!((proj[i] - field.amplitudes[j][i]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_for_two_mode_sources() {
        let basis = neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap();
        let sources = [
            SourceSpec { mode: 0, x0: 3.0, gamma: 4.0, amplitude: Complex64::new(1.0, 0.0) },
            SourceSpec { mode: 1, x0: 2.5, gamma: 6.0, amplitude: Complex64::new(0.0, 2.0) },
        ];
        let field = reference_field(&sources, &basis, 20.0, &[1.0, 4.0], Exec::Sequential).unwrap();
        let (gx, gw) = crate::quadrature::gauss_legendre(20);
        for ix in 0..2 {
            let l2: f64 = gx.iter().zip(&gw).map(|(t, w)| 0.5 * w * field.value(ix, 0.5 * (t + 1.0)).norm_sqr()).sum();
            let modal: f64 = field.amplitudes.iter().map(|u| u[ix].norm_sqr()).sum();
            assert!((l2.sqrt() - modal.sqrt()).abs() < 1e-10 * modal.sqrt());
        }
    }

    #[test]
    fn station_split_of_synthetic_waves() {
        let ks = [Complex64::new(4.4721, 0.0), Complex64::new(3.1828, 0.0), Complex64::new(0.0, 4.4134)];
        let (x1, x2) = (1.0, 1.3);
        let out = |x: f64| ks.iter().map(|k| (I * k * x).exp()).collect::<Vec<_>>();
        let inc = |x: f64| ks.iter().map(|k| (-I * k * x).exp() * 2.0).collect::<Vec<_>>();
        for (c_plus, c_minus) in mode_amplitudes(x1, &out(x1), x2, &out(x2), &ks).unwrap() {
            assert!(c_minus.norm() < 1e-10 && (c_plus - 1.0).norm() < 1e-10);
        }
        for (c_plus, c_minus) in mode_amplitudes(x1, &inc(x1), x2, &inc(x2), &ks).unwrap() {
            assert!(c_plus.norm() < 1e-10 && (c_minus - 2.0).norm() < 1e-10);
        }
        let k = [Complex64::new(PI, 0.0)];
        match mode_amplitudes(0.0, &[ZERO], 1.0, &[ZERO], &k) {
            Err(PmlError::Station { suggested_x2, .. }) => assert!((suggested_x2 - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn discrete_dispersion_limits() {
        let nu = discrete_transverse_eigenvalue(1, 1e-3, 1.0);
        assert!((nu - PI * PI).abs() < 1e-4);
        let k = discrete_axial_wavenumber(20.0, PI * PI, 1e-3);
        assert!((k.re - (20.0 - PI * PI).sqrt()).abs() < 1e-5 && k.im.abs() < 1e-12);
        let k = discrete_axial_wavenumber(20.0, 4.0 * PI * PI, 1e-3);
        assert!(k.re.abs() < 1e-9 && (k.im - (4.0 * PI * PI - 20.0).sqrt()).abs() < 1e-5);
        assert_eq!(discrete_transverse_eigenvalue(0, 0.1, 1.0), 0.0);
    }
}
