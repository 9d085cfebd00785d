//! Scaling profile `s_r` and the deformed metric
//! `g^r_{k,λ}(x) = (1 + λ s_r'(x))^{2-k} g_k(x + λ s_r(x))`.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::geometry::{metric_eval, MetricField, MetricSample};
use crate::{PmlError, Result};

/// Shape of the ramp `s'` on the transition interval `[r+1, r+1+w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProfileKind {
    /// `s' = 3t² - 2t³`, `s ∈ C²`.
    #[default]
    Cubic,
    /// `s' = 10t³ - 15t⁴ + 6t⁵`, `s ∈ C³`.
    Quintic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlSpec {
    pub r: f64,
    pub w: f64,
    pub lambda: Complex64,
    pub alpha: f64,
    pub profile: ProfileKind,
}

/// Orientation of an admissible `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaKind {
    /// `Im λ > 0`: absorbs outgoing waves `e^{+ikx}`.
    Absorbing,
    /// `Im λ < 0`: absorbs incoming waves `e^{-ikx}`.
    AntiAbsorbing,
    /// Real nonzero `λ`: a real change of variables, no absorption.
    Real,
    /// `λ = 0`: the physical operator.
    Disabled,
}

/// Checks `|λ| < sin α < 1/√2`.
pub fn validate_lambda(lambda: Complex64, alpha: f64) -> Result<LambdaKind> {
    let s = alpha.sin();
    if !(alpha > 0.0 && s < FRAC_1_SQRT_2) {
        return Err(PmlError::InvalidLambda(format!(
            "sin(alpha) < 1/sqrt(2) violated: sin({alpha}) = {s:.6}"
        )));
    }
    if !(lambda.norm() < s) {
        return Err(PmlError::InvalidLambda(format!(
            "|lambda| < sin(alpha) violated: |lambda| = {:.6} >= sin({alpha}) = {s:.6}",
            lambda.norm()
        )));
    }
    Ok(if lambda.im > 0.0 {
        LambdaKind::Absorbing
    } else if lambda.im < 0.0 {
        LambdaKind::AntiAbsorbing
    } else if lambda.re != 0.0 {
        LambdaKind::Real
    } else {
        LambdaKind::Disabled
    })
}

impl PmlSpec {
    pub fn new(r: f64, w: f64, lambda: Complex64, alpha: f64) -> Result<Self> {
        let spec = PmlSpec { r, w, lambda, alpha, profile: ProfileKind::Cubic };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_profile(mut self, profile: ProfileKind) -> Self {
        self.profile = profile;
        self
    }

    pub fn with_lambda(mut self, lambda: Complex64) -> Result<Self> {
        self.lambda = lambda;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<LambdaKind> {
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(PmlError::InvalidParameter(format!("PML start r = {} must be >= 1", self.r)));
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(PmlError::InvalidParameter(format!("transition width w = {} must be > 0", self.w)));
        }
        validate_lambda(self.lambda, self.alpha)
    }

    /// Abscissa where the profile starts to grow.
    pub fn onset(&self) -> f64 {
        self.r + 1.0
    }

    /// Abscissa where `s' = 1` is reached.
    pub fn full_strength(&self) -> f64 {
        self.r + 1.0 + self.w
    }
}

/// `(s_r(x), s_r'(x))`.
pub fn profile_eval(spec: &PmlSpec, x: f64) -> (f64, f64) {
    let t = (x - spec.onset()) / spec.w;
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (x - spec.onset() - 0.5 * spec.w, 1.0);
    }
    let t2 = t * t;
    let t3 = t2 * t;
    match spec.profile {
        ProfileKind::Cubic => (spec.w * (t3 - 0.5 * t2 * t2), 3.0 * t2 - 2.0 * t3),
        ProfileKind::Quintic => {
            let t4 = t2 * t2;
            (spec.w * (2.5 * t4 - 3.0 * t4 * t + t3 * t3), 10.0 * t3 - 15.0 * t4 + 6.0 * t4 * t)
        }
    }
}

/// Deformed metric with the profile values at the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformedSample {
    pub metric: MetricSample,
    pub s: f64,
    pub s_prime: f64,
}

impl std::ops::Deref for DeformedSample {
    type Target = MetricSample;
    fn deref(&self) -> &MetricSample {
        &self.metric
    }
}

pub fn deformed_metric(field: &MetricField, spec: &PmlSpec, x: f64, y: f64) -> Result<DeformedSample> {
    if !(x >= 0.0) {
        return Err(PmlError::InvalidParameter(format!("deformed metric needs x >= 0, got {x}")));
    }
    let (s, s_prime) = profile_eval(spec, x);
    if s_prime == 0.0 && s == 0.0 {
        let metric = metric_eval(field, Complex64::new(x, 0.0), y)?;
        return Ok(DeformedSample { metric, s, s_prime });
    }
    let stretch = Complex64::new(1.0, 0.0) + spec.lambda * s_prime;
    if !(stretch.norm() > 1.0 - FRAC_1_SQRT_2) {
        return Err(PmlError::InvalidLambda(format!(
            "|1 + lambda s'| = {} at x = {x} is not above 1 - 1/sqrt(2)",
            stretch.norm()
        )));
    }
    let base = metric_eval(field, Complex64::new(x, 0.0) + spec.lambda * s, y)?;
    let metric = MetricSample::from_entries(base.g00 * stretch * stretch, base.g01 * stretch, base.g11, x, y)?;
    Ok(DeformedSample { metric, s, s_prime })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::CrossSection;
    use crate::geometry::Preset;
    use crate::quadrature::gauss_legendre;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(lambda: Complex64) -> PmlSpec {
        PmlSpec::new(6.0, 2.0, lambda, 0.45).unwrap()
    }

    fn bent() -> MetricField {
        MetricField::new(Preset::Bent { a: 1.0, b_exp: 0.5, g_exp: -1.0 }, CrossSection::flat(1.0).unwrap(), 0.45)
            .unwrap()
    }

    #[test]
    fn profile_examples() {
        let p = spec(Complex64::new(0.0, 0.4));
        assert_eq!(profile_eval(&p, 6.5), (0.0, 0.0));
        assert_eq!(profile_eval(&p, 9.0), (1.0, 1.0));
        assert_relative_eq!(profile_eval(&p, 8.0).1, 0.5, epsilon = 1e-15);
        assert_eq!(profile_eval(&p, 7.0), (0.0, 0.0));
    }

    #[test]
    fn profile_integral_identity() {
        for kind in [ProfileKind::Cubic, ProfileKind::Quintic] {
            let p = spec(Complex64::new(0.0, 0.4)).with_profile(kind);
            let (gx, gw) = gauss_legendre(10);
            // piecewise polynomial: integrate each smooth piece exactly
            let pieces = [(0.0, 7.0), (7.0, 9.0), (9.0, 10.7)];
            for &xe in &[7.3, 8.0, 8.9, 9.0, 10.7] {
                let mut total = 0.0;
                for &(a, b) in &pieces {
                    let (a, b): (f64, f64) = (a, f64::min(b, xe));
                    if b <= a {
                        continue;
                    }
                    let h = 0.5 * (b - a);
                    total += gx.iter().zip(&gw).map(|(t, w)| w * h * profile_eval(&p, a + h * (t + 1.0)).1).sum::<f64>();
                }
                assert!((total - profile_eval(&p, xe).0).abs() < 1e-12, "{kind:?} at {xe}");
            }
        }
    }

    proptest! {
        #[test]
        fn profile_slope_in_unit_interval(x in -5.0f64..30.0, w in 0.1f64..5.0) {
            let p = PmlSpec::new(3.0, w, Complex64::new(0.0, 0.3), 0.45).unwrap();
            let (s, sp) = profile_eval(&p, x);
            prop_assert!((0.0..=1.0).contains(&sp));
            prop_assert!(s >= 0.0);
            let (_, sp2) = profile_eval(&p, x + 1e-3);
            prop_assert!(sp2 + 1e-15 >= sp);
        }
    }

    #[test]
    fn profile_is_c1_in_slope() {
        let p = spec(Complex64::new(0.0, 0.4));
        for &x0 in &[7.0, 9.0] {
            let e = 1e-7;
            let left = (profile_eval(&p, x0).1 - profile_eval(&p, x0 - e).1) / e;
            let right = (profile_eval(&p, x0 + e).1 - profile_eval(&p, x0).1) / e;
            assert!(left.abs() < 1e-5 && right.abs() < 1e-5);
        }
    }

    #[test]
    fn validate_lambda_examples() {
        assert_eq!(validate_lambda(Complex64::new(0.0, 0.4), 0.45).unwrap(), LambdaKind::Absorbing);
        let e = validate_lambda(Complex64::new(0.8, 0.0), 0.45).unwrap_err();
        assert!(e.to_string().contains("|lambda| < sin(alpha)"));
        assert_eq!(validate_lambda(Complex64::new(0.0, 0.0), 0.45).unwrap(), LambdaKind::Disabled);
        assert_eq!(validate_lambda(Complex64::new(0.3, 0.0), 0.45).unwrap(), LambdaKind::Real);
        assert_eq!(validate_lambda(Complex64::new(0.0, -0.3), 0.45).unwrap(), LambdaKind::AntiAbsorbing);
        assert!(validate_lambda(Complex64::new(0.0, 0.1), 0.8).unwrap_err().to_string().contains("sin(alpha) < 1/sqrt(2)"));
    }

    #[test]
    fn deformed_equals_physical_outside_layer_and_for_zero_lambda() {
        let f = bent();
        for lambda in [Complex64::new(0.0, 0.4), Complex64::new(0.0, 0.0)] {
            let p = spec(lambda);
            for &(x, y) in &[(0.0, 0.1), (3.0, 0.5), (7.0, 0.9)] {
                let d = deformed_metric(&f, &p, x, y).unwrap();
                let m = metric_eval(&f, Complex64::new(x, 0.0), y).unwrap();
                assert_eq!(d.metric, m);
            }
        }
        let p = spec(Complex64::new(0.0, 0.0));
        for &x in &[8.0, 12.0] {
            let d = deformed_metric(&f, &p, x, 0.3).unwrap();
            let m = metric_eval(&f, Complex64::new(x, 0.0), 0.3).unwrap();
            assert!((d.g00 - m.g00).norm() < 1e-15 && (d.g01 - m.g01).norm() < 1e-15);
        }
    }

    #[test]
    fn straight_full_strength_layer() {
        let f = MetricField::straight(CrossSection::flat(1.0).unwrap());
        let d = deformed_metric(&f, &spec(Complex64::new(0.0, 0.4)), 11.0, 0.2).unwrap();
        assert!((d.g00 - Complex64::new(0.84, 0.8)).norm() < 1e-14);
        assert_eq!(d.g01, Complex64::new(0.0, 0.0));
        assert_eq!(d.g11, Complex64::new(1.0, 0.0));
        assert!((d.sqrt_det - Complex64::new(1.0, 0.4)).norm() < 1e-14);
    }

    #[test]
    fn real_lambda_is_pullback() {
        let f = bent();
        let p = spec(Complex64::new(0.35, 0.0));
        for &x in &[7.5, 8.2, 12.0] {
            let (s, sp) = profile_eval(&p, x);
            let d = deformed_metric(&f, &p, x, 0.4).unwrap();
            let m = metric_eval(&f, Complex64::new(x + 0.35 * s, 0.0), 0.4).unwrap();
            let a = 1.0 + 0.35 * sp;
            assert!((d.g00 - m.g00 * a * a).norm() < 1e-14);
            assert!((d.g01 - m.g01 * a).norm() < 1e-14);
            assert!((d.g11 - m.g11).norm() < 1e-14);
        }
    }

    #[test]
    fn analytic_in_lambda() {
        // Cauchy–Riemann: d/d(Re λ) = -i d/d(Im λ) for a holomorphic function of λ.
        let f = bent();
        let l0 = Complex64::new(0.1, 0.2);
        let e = 1e-6;
        for &x in &[8.0, 10.5] {
            let at = |l: Complex64| deformed_metric(&f, &PmlSpec::new(6.0, 2.0, l, 0.45).unwrap(), x, 0.6).unwrap();
            let dre = |sel: fn(&DeformedSample) -> Complex64| {
                (sel(&at(l0 + e)) - sel(&at(l0 - e))) / (2.0 * e)
            };
            let dim = |sel: fn(&DeformedSample) -> Complex64| {
                (sel(&at(l0 + Complex64::new(0.0, e))) - sel(&at(l0 - Complex64::new(0.0, e)))) / (2.0 * e)
            };
            let sels: [fn(&DeformedSample) -> Complex64; 3] = [|d| d.g00, |d| d.g01, |d| d.g11];
            for sel in sels {
                let a = dre(sel);
                let b = dim(sel) * Complex64::new(0.0, -1.0);
                assert!((a - b).norm() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stretch_factor_bound_and_conjugation() {
        let f = bent();
        let p = spec(Complex64::new(0.2, 0.3));
        let q = spec(Complex64::new(0.2, -0.3));
        let a = deformed_metric(&f, &p, 10.0, 0.4).unwrap();
        let b = deformed_metric(&f, &q, 10.0, 0.4).unwrap();
        assert!((a.g00.conj() - b.g00).norm() < 1e-14);
        assert!((a.sqrt_det.conj() - b.sqrt_det).norm() < 1e-14);
        assert!(PmlSpec::new(0.5, 2.0, Complex64::new(0.0, 0.1), 0.45).is_err());
        assert!(PmlSpec::new(6.0, 0.0, Complex64::new(0.0, 0.1), 0.45).is_err());
    }
}
