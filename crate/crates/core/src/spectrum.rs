//! Essential spectrum of the deformed operator under the exponential weight
//! `e^{βs}`: for each threshold `ν_j` the curve
//! `ξ ↦ ν_j + (1 + λ)^{-2} (ξ + iβ)²`, a ray when `β = 0` and a parabola
//! otherwise.

use num_complex::Complex64;

use crate::cross_section::ModalBasis;
use crate::report::{fmt_num, Table};
use crate::{PmlError, Result};

pub const DEFAULT_SAMPLES: usize = 4001;

/// Largest relative change of a distance under 2× resampling.
pub const REFINEMENT_TOL: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ThresholdCurve {
    pub nu: f64,
    pub xi: Vec<f64>,
    pub mu: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct SpectrumCurves {
    pub lambda: Complex64,
    pub beta: f64,
    pub xi_max: f64,
    pub curves: Vec<ThresholdCurve>,
}

/// `3·sqrt(|μ0| + ν_max)`.
pub fn default_xi_max(mu0: f64, basis: &ModalBasis) -> f64 {
    let nu_max = basis.eigenvalues().last().copied().unwrap_or(0.0);
    3.0 * (mu0.abs() + nu_max).sqrt()
}

pub fn essential_curves(lambda: Complex64, beta: f64, basis: &ModalBasis, xi_max: f64, samples: usize) -> Result<SpectrumCurves> {
    curves_for(lambda, beta, basis.eigenvalues(), xi_max, samples)
}

fn curves_for(lambda: Complex64, beta: f64, nus: &[f64], xi_max: f64, samples: usize) -> Result<SpectrumCurves> {
    if lambda.norm() >= std::f64::consts::FRAC_1_SQRT_2 {
        return Err(PmlError::InvalidLambda(format!("|lambda| = {} must be below 1/sqrt(2)", lambda.norm())));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(PmlError::InvalidParameter(format!("beta = {beta} must be >= 0")));
    }
    if !(xi_max > 0.0) || samples < 2 {
        return Err(PmlError::InvalidParameter(format!("need xi_max > 0 and >= 2 samples (got {xi_max}, {samples})")));
    }
    let one_plus = Complex64::new(1.0, 0.0) + lambda;
    let factor = (one_plus * one_plus).inv();
    let xi: Vec<f64> = (0..samples)
        .map(|i| xi_max * ((2 * i) as f64 - (samples - 1) as f64) / (samples - 1) as f64)
        .collect();
    let curves = nus
        .iter()
        .map(|&nu| ThresholdCurve {
            nu,
            mu: xi.iter().map(|&t| { let z = Complex64::new(t, beta); nu + factor * (z * z) }).collect(),
            xi: xi.clone(),
        })
        .collect();
    Ok(SpectrumCurves { lambda, beta, xi_max, curves })
}

impl SpectrumCurves {
    pub fn samples(&self) -> usize {
        self.curves.first().map_or(0, |c| c.xi.len())
    }

    pub fn conj(&self) -> SpectrumCurves {
        SpectrumCurves {
            lambda: self.lambda.conj(),
            beta: self.beta,
            xi_max: self.xi_max,
            curves: self
                .curves
                .iter()
                .map(|c| ThresholdCurve { nu: c.nu, xi: c.xi.clone(), mu: c.mu.iter().map(|m| m.conj()).collect() })
                .collect(),
        }
    }

    /// Same curves with `2·samples - 1` points.
    pub fn refined(&self) -> SpectrumCurves {
        let nus: Vec<f64> = self.curves.iter().map(|c| c.nu).collect();
        curves_for(self.lambda, self.beta, &nus, self.xi_max, 2 * self.samples() - 1)
            .expect("parameters were validated on construction")
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["nu", "xi", "mu_re", "mu_im"]);
        for c in &self.curves {
            for (x, m) in c.xi.iter().zip(&c.mu) {
                t.push_nums(&[c.nu, *x, m.re, m.im]);
            }
        }
        t
    }

    /// Minimum distance from `mu0` to the sampled polylines, without the
    /// refinement check.
    pub fn raw_distance(&self, mu0: Complex64) -> f64 {
        self.curves.iter().map(|c| nearest(mu0, &c.mu).0).fold(f64::INFINITY, f64::min)
    }
}

/// Distance to the polyline and the side of `p` relative to its orientation
/// (`+1` left, `-1` right, `0` on it).
fn nearest(p: Complex64, poly: &[Complex64]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for w in poly.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = b - a;
        let len2 = d.norm_sqr();
        let t = if len2 > 0.0 { (((p - a) * d.conj()).re / len2).clamp(0.0, 1.0) } else { 0.0 };
        let dist = (p - (a + d * t)).norm();
        if dist < best.0 {
            let cross = d.re * (p - a).im - d.im * (p - a).re;
            best = (dist, cross.signum() * (dist > 0.0) as u8 as f64);
        }
    }
    best
}

/// Distance from `mu0` to the essential spectrum curves, verified against a
/// 2× resampling.
pub fn spectral_distance(mu0: Complex64, curves: &SpectrumCurves) -> Result<f64> {
    let d = curves.raw_distance(mu0);
    let fine = curves.refined().raw_distance(mu0);
    let change = (d - fine).abs();
    if change > REFINEMENT_TOL * fine && change > 1e-12 {
        return Err(PmlError::Refinement { relative_change: change / fine.max(f64::MIN_POSITIVE) });
    }
    Ok(fine)
}

/// Smallest `β` at which a weighted spectrum curve passes through `mu0`,
/// found from the side changes of `mu0` relative to the curves: scan on a
/// grid in `(0, beta_hi]`, then bisect to `tol`.
pub fn decay_endpoint_by_bisection(
    mu0: f64,
    lambda: Complex64,
    basis: &ModalBasis,
    beta_hi: f64,
    tol: f64,
) -> Result<f64> {
    let mu = Complex64::new(mu0, 0.0);
    let xi_max = default_xi_max(mu0, basis) + 3.0 * beta_hi;
    let sides = |beta: f64| -> Result<Vec<f64>> {
        let c = essential_curves(lambda, beta, basis, xi_max, DEFAULT_SAMPLES)?;
        Ok(c.curves.iter().map(|c| nearest(mu, &c.mu).1).collect())
    };
    let beta0 = 1e-6;
    let start = sides(beta0)?;
    let flipped = |beta: f64| -> Result<bool> { Ok(sides(beta)?.iter().zip(&start).any(|(a, b)| a != b)) };
    const SCAN: usize = 256;
    let mut lo = beta0;
    for i in 1..=SCAN {
        let hi = beta0 + (beta_hi - beta0) * i as f64 / SCAN as f64;
        if flipped(hi)? {
            let mut hi = hi;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if flipped(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        lo = hi;
    }
    Err(PmlError::InvalidParameter(format!("no curve crosses mu0 = {mu0} for beta in (0, {beta_hi}]")))
}

/// Rows `(beta, distance)` of the weighted-spectrum distance along a β grid.
pub fn distance_table(mu0: f64, lambda: Complex64, basis: &ModalBasis, betas: &[f64]) -> Result<Table> {
    let mut t = Table::new(&["beta", "distance"]);
    let xi_max = default_xi_max(mu0, basis) + 3.0 * betas.iter().copied().fold(0.0, f64::max);
    for &b in betas {
        let c = essential_curves(lambda, b, basis, xi_max, DEFAULT_SAMPLES)?;
        t.push(vec![fmt_num(b), fmt_num(spectral_distance(Complex64::new(mu0, 0.0), &c)?)]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{beta_max, neumann_eigenpairs, CrossSection};
    use std::f64::consts::PI;

    fn basis() -> ModalBasis {
        neumann_eigenpairs(&CrossSection::flat(1.0).unwrap(), 3).unwrap()
    }

    #[test]
    fn undeformed_rays_are_real() {
        let c = essential_curves(Complex64::new(0.0, 0.0), 0.0, &basis(), 10.0, 101).unwrap();
        for t in &c.curves {
            for (x, m) in t.xi.iter().zip(&t.mu) {
                assert_eq!(m.im, 0.0);
                assert_eq!(m.re, t.nu + x * x);
            }
        }
    }

    #[test]
    fn deformed_ray_direction() {
        let c = essential_curves(Complex64::new(0.0, 0.4), 0.0, &basis(), 10.0, 101).unwrap();
        let t = &c.curves[1];
        let arg = (t.mu[100] - t.nu).arg();
        assert!((arg + 2.0 * 0.4f64.atan()).abs() < 1e-12);
        assert!((arg + 0.7610).abs() < 1e-4);
        // symmetric in xi for beta = 0
        for i in 0..101 {
            assert_eq!(t.mu[i], t.mu[100 - i]);
        }
    }

    #[test]
    fn parabola_vertex() {
        let lambda = Complex64::new(0.1, 0.3);
        let c = essential_curves(lambda, 0.7, &basis(), 5.0, 11).unwrap();
        let vertex = PI * PI - (Complex64::new(1.0, 0.0) + lambda).powi(-2) * 0.49;
        assert!((c.curves[1].mu[5] - vertex).norm() < 1e-13);
    }

    #[test]
    fn distance_examples() {
        let b = basis();
        let xm = default_xi_max(20.0, &b);
        let c = essential_curves(Complex64::new(0.0, 0.4), 0.0, &b, xm, DEFAULT_SAMPLES).unwrap();
        let d = spectral_distance(Complex64::new(20.0, 0.0), &c).unwrap();
        let exact = (20.0 - PI * PI) * (2.0 * 0.4f64.atan()).sin();
        assert!((d - exact).abs() < 0.01 * exact, "{d} vs {exact}");
        assert!((d - 6.98).abs() < 0.01);

        let c0 = essential_curves(Complex64::new(0.0, 0.0), 0.0, &b, xm, DEFAULT_SAMPLES).unwrap();
        assert!(spectral_distance(Complex64::new(20.0, 0.0), &c0).unwrap() < 1e-12);
        assert!((spectral_distance(Complex64::new(-5.0, 0.0), &c0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn undersampled_curves_are_rejected() {
        let c = essential_curves(Complex64::new(0.0, 0.4), 0.0, &basis(), 30.0, 4).unwrap();
        assert!(matches!(spectral_distance(Complex64::new(20.0, 0.0), &c), Err(PmlError::Refinement { .. })));
    }

    #[test]
    fn conjugation_symmetry() {
        let lambda = Complex64::new(0.1, 0.4);
        let a = essential_curves(lambda, 0.5, &basis(), 8.0, 51).unwrap();
        let b = essential_curves(lambda.conj(), 0.5, &basis(), 8.0, 51).unwrap();
        // conjugation maps the point at xi to the point at -xi
        for (ca, cb) in a.conj().curves.iter().zip(&b.curves) {
            for (x, y) in ca.mu.iter().zip(cb.mu.iter().rev()) {
                assert!((x - y).norm() < 1e-13 * x.norm());
            }
        }
    }

    #[test]
    fn bisection_finds_decay_endpoint() {
        let b = basis();
        let lambda = Complex64::new(0.0, 0.4);
        let beta = decay_endpoint_by_bisection(20.0, lambda, &b, 3.0, 1e-5).unwrap();
        let oracle = beta_max(20.0, lambda, &b).unwrap();
        assert!((beta - oracle).abs() < 1e-4, "{beta} vs {oracle}");
        assert!((beta - 1.27313).abs() < 1e-3);
        let mu = Complex64::new(20.0, 0.0);
        let xm = default_xi_max(20.0, &b) + 9.0;
        for inside in [0.3, 0.8, 1.2] {
            let c = essential_curves(lambda, inside, &b, xm, DEFAULT_SAMPLES).unwrap();
            assert!(spectral_distance(mu, &c).unwrap() > 1e-2);
        }
        // on the crossing curve only the chord error of the sampling remains
        let c = essential_curves(lambda, oracle, &b, xm, DEFAULT_SAMPLES).unwrap();
        assert!(c.raw_distance(mu) < 1e-3);
    }

    #[test]
    fn csv_columns() {
        let c = essential_curves(Complex64::new(0.0, 0.4), 0.0, &basis(), 5.0, 5).unwrap();
        let t = c.to_table();
        assert_eq!(t.header, ["nu", "xi", "mu_re", "mu_im"]);
        assert_eq!(t.rows.len(), 15);
    }
}
