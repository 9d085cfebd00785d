//! Metric presets on the strip `[0, ∞) × [0, L_y]`, evaluated at complex
//! axial coordinates.
//!
//! `bent` and `stretched` are pullbacks of the Euclidean metric under
//!
//! ```text
//! bent:      (x, y) -> (x, a (x+3)^b + (1 + (x+3)^g) y),   b < 1, g < 0
//! stretched: (x, y) -> (∫_0^x 1 + 1/log(t+4) dt, (1 + 1/log(x+5)) y)
//! ```
//!
//! and approach the product metric `dx² + dy²` at infinity; `straight` is the
//! product metric `dx² + h(y) dy²` itself.

use num_complex::Complex64;

use crate::cross_section::CrossSection;
use crate::quadrature::integrate_adaptive;
use crate::{PmlError, Result};

/// Default sector half-angle in radians.
pub const DEFAULT_ALPHA: f64 = 0.45;

/// Smallest admissible `|det g|`.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Straight,
    Bent { a: f64, b_exp: f64, g_exp: f64 },
    Stretched,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Straight => "straight",
            Preset::Bent { .. } => "bent",
            Preset::Stretched => "stretched",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricField {
    preset: Preset,
    cross_section: CrossSection,
    alpha: f64,
}

impl MetricField {
    pub fn new(preset: Preset, cross_section: CrossSection, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.sin() < std::f64::consts::FRAC_1_SQRT_2) {
            return Err(PmlError::InvalidParameter(format!(
                "sector half-angle alpha = {alpha} must satisfy 0 < alpha and sin(alpha) < 1/sqrt(2)"
            )));
        }
        if let Preset::Bent { a, b_exp, g_exp } = preset {
            if !a.is_finite() || !(b_exp < 1.0) || !(g_exp < 0.0) {
                return Err(PmlError::InvalidParameter(format!(
                    "bent preset needs finite a, b_exp < 1 and g_exp < 0 (got a = {a}, b_exp = {b_exp}, g_exp = {g_exp})"
                )));
            }
        }
        if preset != Preset::Straight && !cross_section.weight().is_flat() {
            return Err(PmlError::InvalidParameter(format!(
                "{} preset is a Euclidean pullback and requires a flat cross-section weight",
                preset.name()
            )));
        }
        Ok(MetricField { preset, cross_section, alpha })
    }

    pub fn straight(cross_section: CrossSection) -> Self {
        MetricField { preset: Preset::Straight, cross_section, alpha: DEFAULT_ALPHA }
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn cross_section(&self) -> &CrossSection {
        &self.cross_section
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Image of a real point under the preset's diffeomorphism.
    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        match self.preset {
            Preset::Straight => (x, y),
            Preset::Bent { a, b_exp, g_exp } => {
                let t = x + 3.0;
                (x, t.powf(b_exp) * a + (1.0 + t.powf(g_exp)) * y)
            }
            Preset::Stretched => {
                let s = integrate_adaptive(
                    |t| Complex64::new(1.0 + 1.0 / (t + 4.0).ln(), 0.0),
                    0.0,
                    x,
                    1e-14,
                    1e-15,
                )
                .re;
                (s, (1.0 + 1.0 / (x + 5.0).ln()) * y)
            }
        }
    }
}

/// Complex symmetric 2×2 metric sample with its inverse and volume density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub g00: Complex64,
    pub g01: Complex64,
    pub g11: Complex64,
    pub det: Complex64,
    /// Inverse entries `[g^00, g^01, g^11]`.
    pub inv: [Complex64; 3],
    /// Principal branch of `sqrt(det)`.
    pub sqrt_det: Complex64,
}

impl MetricSample {
    pub fn from_entries(g00: Complex64, g01: Complex64, g11: Complex64, x: f64, y: f64) -> Result<Self> {
        let det = g00 * g11 - g01 * g01;
        if !(det.norm() >= DEGENERACY_TOL) {
            return Err(PmlError::Degenerate { x, y, det_abs: det.norm() });
        }
        let inv = [g11 / det, -g01 / det, g00 / det];
        Ok(MetricSample { g00, g01, g11, det, inv, sqrt_det: det.sqrt() })
    }

    pub fn conj(&self) -> Self {
        MetricSample {
            g00: self.g00.conj(),
            g01: self.g01.conj(),
            g11: self.g11.conj(),
            det: self.det.conj(),
            inv: [self.inv[0].conj(), self.inv[1].conj(), self.inv[2].conj()],
            sqrt_det: self.sqrt_det.conj(),
        }
    }
}

fn check_sector(z: Complex64, alpha: f64) -> Result<()> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(PmlError::Domain { z, reason: "non-finite coordinate".into() });
    }
    if z.im == 0.0 {
        if z.re >= 0.0 {
            return Ok(());
        }
        return Err(PmlError::Domain { z, reason: "negative real axial coordinate".into() });
    }
    if z.re > 0.0 && z.im.abs() < alpha.tan() * z.re * (1.0 + 1e-12) {
        Ok(())
    } else {
        Err(PmlError::Domain { z, reason: format!("|arg z| must stay below alpha = {alpha}") })
    }
}

/// Metric coefficients `(g00, g01, g11)` at complex axial coordinate `z`.
pub fn metric_eval(field: &MetricField, z: Complex64, y: f64) -> Result<MetricSample> {
    check_sector(z, field.alpha)?;
    let one = Complex64::new(1.0, 0.0);
    let (g00, g01, g11) = match field.preset {
        Preset::Straight => (one, Complex64::new(0.0, 0.0), Complex64::new(field.cross_section.weight().eval(y), 0.0)),
        Preset::Bent { a, b_exp, g_exp } => {
            let t = z + 3.0;
            let p = t.powf(b_exp - 1.0) * (b_exp * a) + t.powf(g_exp - 1.0) * (g_exp * y);
            let q = one + t.powf(g_exp);
            (one + p * p, p * q, q * q)
        }
        Preset::Stretched => {
            let u = one + (z + 4.0).ln().inv();
            let l5 = (z + 5.0).ln();
            let v = one + l5.inv();
            let p = -y / ((z + 5.0) * l5 * l5);
            (u * u + p * p, p * v, v * v)
        }
    };
    MetricSample::from_entries(g00, g01, g11, z.re, y)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecayOptions {
    /// Transverse sample count per ray (at least 2).
    pub y_samples: usize,
    /// Also sample `|∂_y|` of each deviation.
    pub derivatives: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub radius: f64,
    pub g00_dev: f64,
    pub g01_dev: f64,
    pub g11_dev: f64,
    /// `[|∂_y g00|, |∂_y g01|, |∂_y (g11 - h)|]` maxima when requested.
    pub derivative_devs: Option<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
}

impl DecayReport {
    /// Column-wise non-increase beyond the first row, allowing a relative
    /// slack `tol` for sampling noise.
    pub fn is_non_increasing(&self, tol: f64) -> bool {
        let tail = &self.rows[self.rows.len().min(1)..];
        tail.windows(2).all(|w| {
            let ok = |a: f64, b: f64| b <= a * (1.0 + tol) + 1e-300;
            ok(w[0].g00_dev, w[1].g00_dev) && ok(w[0].g01_dev, w[1].g01_dev) && ok(w[0].g11_dev, w[1].g11_dev)
        })
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].g00_dev < w[0].g00_dev && w[1].g01_dev < w[0].g01_dev && w[1].g11_dev < w[0].g11_dev
        })
    }
}

/// Sup-deviation of the metric from the product metric on arcs `|z| = radius`
/// sampled along the given rays.
pub fn decay_report(field: &MetricField, radii: &[f64], rays: &[f64], options: DecayOptions) -> Result<DecayReport> {
    if rays.iter().any(|t| !(t.abs() < field.alpha)) {
        return Err(PmlError::InvalidParameter(format!(
            "ray angles must lie strictly inside (-{0}, {0})",
            field.alpha
        )));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(PmlError::InvalidParameter("radii must be positive and increasing".into()));
    }
    let ny = options.y_samples.max(2);
    let l = field.cross_section.length();
    let h = |y: f64| field.cross_section.weight().eval(y);
    let dy = 1e-5 * l;
    let mut rows = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mut row = DecayRow { radius, g00_dev: 0.0, g01_dev: 0.0, g11_dev: 0.0, derivative_devs: None };
        let mut der = [0.0f64; 3];
        for &theta in rays {
            let z = Complex64::from_polar(radius, theta);
            for m in 0..ny {
                let y = l * m as f64 / (ny - 1) as f64;
                let s = metric_eval(field, z, y)?;
                row.g00_dev = row.g00_dev.max((s.g00 - 1.0).norm());
                row.g01_dev = row.g01_dev.max(s.g01.norm());
                row.g11_dev = row.g11_dev.max((s.g11 - h(y)).norm());
                if options.derivatives {
                    let (ya, yb) = ((y - dy).max(0.0), (y + dy).min(l));
                    let a = metric_eval(field, z, ya)?;
                    let b = metric_eval(field, z, yb)?;
                    let w = yb - ya;
                    der[0] = der[0].max(((b.g00 - a.g00) / w).norm());
                    der[1] = der[1].max(((b.g01 - a.g01) / w).norm());
                    der[2] = der[2].max(((b.g11 - h(yb) - a.g11 + h(ya)) / w).norm());
                }
            }
        }
        if options.derivatives {
            row.derivative_devs = Some(der);
        }
        rows.push(row);
    }
    Ok(DecayReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::WeightProfile;
    use approx::assert_relative_eq;

    fn flat() -> CrossSection {
        CrossSection::flat(1.0).unwrap()
    }

    fn bent() -> MetricField {
        MetricField::new(Preset::Bent { a: 1.0, b_exp: 0.5, g_exp: -1.0 }, flat(), DEFAULT_ALPHA).unwrap()
    }

    fn stretched() -> MetricField {
        MetricField::new(Preset::Stretched, flat(), DEFAULT_ALPHA).unwrap()
    }

    #[test]
    fn straight_is_identity() {
        let f = MetricField::straight(flat());
        let s = metric_eval(&f, Complex64::new(7.0, 1.0), 0.3).unwrap();
        assert_eq!((s.g00, s.g01, s.g11), (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn bent_example_values() {
        let s = metric_eval(&bent(), Complex64::new(6.0, 0.0), 0.5).unwrap();
        assert_relative_eq!(s.g00.re, 1.025_758_3, epsilon = 1e-7);
        let p = 0.5 / 3.0 - 0.5 / 81.0;
        assert_relative_eq!(s.g01.re, p * (10.0 / 9.0), epsilon = 1e-14);
        assert_relative_eq!(s.g01.re, 0.178_326_7, epsilon = 1e-6);
        assert_relative_eq!(s.g11.re, 1.234_567_9, epsilon = 1e-7);
        assert_eq!(s.g00.im, 0.0);
    }

    #[test]
    fn stretched_far_field() {
        let s = metric_eval(&stretched(), Complex64::new(1e6, 0.0), 0.4).unwrap();
        let expect = (1.0 + 1.0 / (1e6f64 + 5.0).ln()).powi(2);
        assert_relative_eq!(s.g11.re, expect, epsilon = 1e-12);
        assert!((s.g11.re - 1.15).abs() < 1e-3);
        assert!((s.g00.re - 1.0).abs() < 0.16);
    }

    #[test]
    fn sample_inverse_and_sqrt() {
        for f in [bent(), stretched()] {
            let s = metric_eval(&f, Complex64::new(4.0, 1.0), 0.7).unwrap();
            let i00 = s.g00 * s.inv[0] + s.g01 * s.inv[1];
            let i01 = s.g00 * s.inv[1] + s.g01 * s.inv[2];
            let i11 = s.g01 * s.inv[1] + s.g11 * s.inv[2];
            assert!((i00 - 1.0).norm() < 1e-12 && i01.norm() < 1e-12 && (i11 - 1.0).norm() < 1e-12);
            assert!((s.sqrt_det * s.sqrt_det - s.det).norm() < 1e-12);
        }
    }

    #[test]
    fn schwarz_reflection() {
        for f in [bent(), stretched()] {
            let z = Complex64::new(5.0, 1.5);
            let a = metric_eval(&f, z, 0.25).unwrap();
            let b = metric_eval(&f, z.conj(), 0.25).unwrap();
            let c = a.conj();
            for (u, v) in [(b.g00, c.g00), (b.g01, c.g01), (b.g11, c.g11), (b.sqrt_det, c.sqrt_det)] {
                assert!((u - v).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn real_axis_gives_spd() {
        let weighted = MetricField::straight(CrossSection::new(1.0, WeightProfile::Polynomial(vec![1.0, 0.2])).unwrap());
        for f in [bent(), stretched(), weighted] {
            for &x in &[0.0, 0.5, 3.0, 40.0] {
                for &y in &[0.0, 0.5, 1.0] {
                    let s = metric_eval(&f, Complex64::new(x, 0.0), y).unwrap();
                    assert_eq!(s.g00.im, 0.0);
                    assert_eq!(s.g01.im, 0.0);
                    assert!(s.g00.re > 0.0 && s.det.re > 0.0);
                }
            }
        }
    }

    #[test]
    fn pullback_matches_finite_difference_jacobian() {
        for f in [bent(), stretched()] {
            for &(x, y) in &[(0.5, 0.2), (3.0, 0.9), (12.0, 0.5)] {
                let e = 1e-5;
                let (sxp, txp) = f.map_point(x + e, y);
                let (sxm, txm) = f.map_point(x - e, y);
                let (syp, typ) = f.map_point(x, y + e);
                let (sym, tym) = f.map_point(x, y - e);
                let jx = ((sxp - sxm) / (2.0 * e), (txp - txm) / (2.0 * e));
                let jy = ((syp - sym) / (2.0 * e), (typ - tym) / (2.0 * e));
                let s = metric_eval(&f, Complex64::new(x, 0.0), y).unwrap();
                assert!((s.g00.re - (jx.0 * jx.0 + jx.1 * jx.1)).abs() < 1e-6);
                assert!((s.g01.re - (jx.0 * jy.0 + jx.1 * jy.1)).abs() < 1e-6);
                assert!((s.g11.re - (jy.0 * jy.0 + jy.1 * jy.1)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sector_violations_are_domain_errors() {
        let f = bent();
        assert!(matches!(metric_eval(&f, Complex64::new(1.0, 1.0), 0.0), Err(PmlError::Domain { .. })));
        assert!(matches!(metric_eval(&f, Complex64::new(-1.0, 0.0), 0.0), Err(PmlError::Domain { .. })));
    }

    #[test]
    fn parameter_validation() {
        assert!(MetricField::new(Preset::Bent { a: 1.0, b_exp: 1.0, g_exp: -1.0 }, flat(), 0.45).is_err());
        assert!(MetricField::new(Preset::Bent { a: 1.0, b_exp: 0.5, g_exp: 0.0 }, flat(), 0.45).is_err());
        assert!(MetricField::new(Preset::Straight, flat(), 0.8).is_err());
        let weighted = CrossSection::new(1.0, WeightProfile::Polynomial(vec![1.0, 0.2])).unwrap();
        assert!(MetricField::new(Preset::Stretched, weighted, 0.45).is_err());
    }

    #[test]
    fn decay_reports() {
        let straight = MetricField::straight(flat());
        let r = decay_report(&straight, &[10.0, 100.0], &[0.0, 0.3], DecayOptions { y_samples: 5, derivatives: true }).unwrap();
        assert!(r.rows.iter().all(|row| row.g00_dev == 0.0 && row.g01_dev == 0.0 && row.g11_dev == 0.0));

        let rays = [-0.4, -0.2, 0.0, 0.2, 0.4];
        let opts = DecayOptions { y_samples: 11, derivatives: true };
        let r = decay_report(&bent(), &[10.0, 100.0, 1000.0], &rays, opts).unwrap();
        assert!(r.is_strictly_decreasing());

        let r = decay_report(&stretched(), &[1e2, 1e4, 1e6], &rays, opts).unwrap();
        assert!(r.is_strictly_decreasing());
        // log rate: g11 deviation still above 0.1 at 10^6
        assert!(r.rows[2].g11_dev > 0.1);

        assert!(decay_report(&bent(), &[10.0], &[0.45], opts).is_err());
        assert!(decay_report(&bent(), &[10.0, 5.0], &[0.0], opts).is_err());
    }
}
