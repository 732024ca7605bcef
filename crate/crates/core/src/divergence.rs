//! phi-divergences and their convex conjugates.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divergences addressable from configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceId {
    Kl,
    Chi2,
}

impl DivergenceId {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceId::Kl => "kl",
            DivergenceId::Chi2 => "chi2",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "kl" => Ok(DivergenceId::Kl),
            "chi2" => Ok(DivergenceId::Chi2),
            other => Err(Error::UnknownDivergence(other.to_string())),
        }
    }
}

impl fmt::Display for DivergenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied phi with its first two derivatives.
#[derive(Clone)]
pub struct CustomPhi {
    name: String,
    phi: ScalarFn,
    d1: ScalarFn,
    d2: ScalarFn,
}

#[derive(Clone)]
enum Kind {
    Kl,
    Chi2,
    Custom(CustomPhi),
}

/// A convex `phi` on `[0, inf)` with `phi(1) = 0` and `phi''(1) > 0`.
#[derive(Clone)]
pub struct PhiDivergence {
    kind: Kind,
}

impl fmt::Debug for PhiDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhiDivergence({})", self.name())
    }
}

/// Stationarity tolerance of the numeric conjugate.
pub const CONJUGATE_TOLERANCE: f64 = 1e-12;

/// Largest `t` searched by the numeric conjugate before declaring the
/// supremum infinite.
const T_MAX: f64 = 1e12;

impl PhiDivergence {
    /// `phi(t) = t ln t - t + 1`
    pub fn kl() -> Self {
        PhiDivergence { kind: Kind::Kl }
    }

    /// `phi(t) = (t - 1)^2`
    pub fn chi2() -> Self {
        PhiDivergence { kind: Kind::Chi2 }
    }

    pub fn from_id(id: DivergenceId) -> Self {
        match id {
            DivergenceId::Kl => Self::kl(),
            DivergenceId::Chi2 => Self::chi2(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        DivergenceId::parse(name).map(Self::from_id)
    }

    /// Custom divergence; the conjugate is computed numerically.
    ///
    /// Rejected unless `phi(1) = 0`, `phi''(1) > 0` and `phi'' >= 0` on a
    /// grid over `[0, 50]`.
    pub fn custom(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let name = name.into();
        let at_one = phi(1.0);
        if at_one.abs() > 1e-12 {
            return Err(Error::InvalidDivergence(format!("{name}: phi(1) = {at_one}")));
        }
        let curv = d2(1.0);
        if !(curv > 1e-12) {
            return Err(Error::InvalidDivergence(format!(
                "{name}: phi''(1) = {curv} must be positive"
            )));
        }
        for i in 1..=2000 {
            let t = 50.0 * i as f64 / 2000.0;
            let c = d2(t);
            if c < -1e-12 || c.is_nan() {
                return Err(Error::InvalidDivergence(format!(
                    "{name}: phi''({t}) = {c}, phi is not convex"
                )));
            }
        }
        Ok(PhiDivergence {
            kind: Kind::Custom(CustomPhi {
                name,
                phi: Arc::new(phi),
                d1: Arc::new(d1),
                d2: Arc::new(d2),
            }),
        })
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            Kind::Kl => "kl",
            Kind::Chi2 => "chi2",
            Kind::Custom(c) => &c.name,
        }
    }

    pub fn phi(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Kl => {
                if t == 0.0 {
                    1.0
                } else {
                    t * t.ln() - t + 1.0
                }
            }
            Kind::Chi2 => (t - 1.0) * (t - 1.0),
            Kind::Custom(c) => (c.phi)(t),
        }
    }

    pub fn phi_prime(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Kl => t.ln(),
            Kind::Chi2 => 2.0 * (t - 1.0),
            Kind::Custom(c) => (c.d1)(t),
        }
    }

    pub fn phi_second(&self, t: f64) -> f64 {
        match &self.kind {
            Kind::Kl => 1.0 / t,
            Kind::Chi2 => 2.0,
            Kind::Custom(c) => (c.d2)(t),
        }
    }

    /// Left end of the region where `phi*` is smooth, if any.
    pub fn conjugate_branch_point(&self) -> Option<f64> {
        match &self.kind {
            Kind::Chi2 => Some(-2.0),
            _ => None,
        }
    }

    /// `phi*''(0) = 1 / phi''(1)`.
    pub fn conjugate_curvature(&self) -> f64 {
        1.0 / self.phi_second(1.0)
    }

    /// `phi*(s) = sup_{t >= 0} { s t - phi(t) }`.
    pub fn conjugate(&self, s: f64) -> f64 {
        self.conjugate_all(s).0
    }

    pub fn conjugate_prime(&self, s: f64) -> f64 {
        self.conjugate_all(s).1
    }

    pub fn conjugate_second(&self, s: f64) -> f64 {
        self.conjugate_all(s).2
    }

    /// `(phi*(s), phi*'(s), phi*''(s))`.
    pub fn conjugate_all(&self, s: f64) -> (f64, f64, f64) {
        match &self.kind {
            Kind::Kl => {
                let e = s.exp();
                (s.exp_m1(), e, e)
            }
            Kind::Chi2 => {
                if s >= -2.0 {
                    (s + 0.25 * s * s, 1.0 + 0.5 * s, 0.5)
                } else {
                    (-1.0, 0.0, 0.0)
                }
            }
            Kind::Custom(c) => numeric_conjugate(c, s),
        }
    }
}

/// Maximizer `t*` of `s t - phi(t)`, then `phi* = s t* - phi(t*)`,
/// `phi*' = t*`, `phi*'' = 1 / phi''(t*)`.
fn numeric_conjugate(c: &CustomPhi, s: f64) -> (f64, f64, f64) {
    let grad = |t: f64| s - (c.d1)(t);
    let value = |t: f64| s * t - (c.phi)(t);
    // Concave objective: boundary maximizer when it already decreases at 0.
    let g0 = grad(0.0);
    if g0 <= 0.0 && g0.is_finite() {
        return (value(0.0), 0.0, 0.0);
    }
    let mut hi = 1.0;
    while grad(hi) > 0.0 {
        hi *= 2.0;
        if hi > T_MAX {
            return (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        }
    }
    let mut lo = 0.0;
    // Golden section narrows the bracket, Newton finishes.
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (value(x1), value(x2));
    while b - a > 1e-6 * (1.0 + a.abs()) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = value(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = value(x1);
        }
    }
    let mut t = 0.5 * (a + b);
    for _ in 0..100 {
        let g = grad(t);
        if g.abs() <= CONJUGATE_TOLERANCE {
            break;
        }
        if g > 0.0 {
            lo = lo.max(t);
        } else {
            hi = hi.min(t);
        }
        let step = t + g / (c.d2)(t);
        t = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    (value(t), t, 1.0 / (c.d2)(t))
}

/// `E_{P_n}[phi(n w_i)]`, the divergence of `w` from the uniform weights.
pub fn divergence_value(weights: &[f64], div: &PhiDivergence) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("weights sum to {total}")));
    }
    let n = weights.len() as f64;
    Ok(weights.iter().map(|w| div.phi(n * w)).sum::<f64>() / n)
}

/// Residuals of `phi*(0) = 0`, `phi*'(0) = 1`, `phi*''(0) = 1/phi''(1)`,
/// with derivatives taken by central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugateIdentities {
    pub divergence: String,
    pub value_at_zero: f64,
    pub slope_residual: f64,
    pub curvature_residual: f64,
    /// Numeric `phi*''(0)`.
    pub curvature: f64,
}

pub const IDENTITY_TOLERANCE: f64 = 1e-8;
const FD_STEP: f64 = 1e-5;

impl ConjugateIdentities {
    pub fn passes(&self) -> bool {
        self.value_at_zero < IDENTITY_TOLERANCE
            && self.slope_residual < IDENTITY_TOLERANCE
            && self.curvature_residual < IDENTITY_TOLERANCE
    }
}

pub fn verify_conjugate_identities(div: &PhiDivergence) -> ConjugateIdentities {
    let h = FD_STEP;
    let (fp, f0, fm) = (div.conjugate(h), div.conjugate(0.0), div.conjugate(-h));
    let slope = (fp - fm) / (2.0 * h);
    let curvature = (fp - 2.0 * f0 + fm) / (h * h);
    ConjugateIdentities {
        divergence: div.name().to_string(),
        value_at_zero: f0.abs(),
        slope_residual: (slope - 1.0).abs(),
        curvature_residual: (curvature - 1.0 / div.phi_second(1.0)).abs(),
        curvature,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quadratic_custom() -> PhiDivergence {
        // Same phi as chi2, through the numeric path.
        PhiDivergence::custom("chi2-numeric", |t| (t - 1.0).powi(2), |t| 2.0 * (t - 1.0), |_| 2.0)
            .unwrap()
    }

    #[test]
    fn closed_form_conjugates() {
        assert_eq!(PhiDivergence::kl().conjugate(0.0), 0.0);
        assert_relative_eq!(PhiDivergence::kl().conjugate(1.0), std::f64::consts::E - 1.0, epsilon = 1e-15);
        assert_relative_eq!(PhiDivergence::chi2().conjugate(1.0), 1.25, epsilon = 1e-15);
        assert_eq!(PhiDivergence::chi2().conjugate(-3.0), -1.0);
    }

    #[test]
    fn numeric_conjugate_matches_closed_form() {
        let custom = quadratic_custom();
        let chi2 = PhiDivergence::chi2();
        for &s in &[-3.0, -2.5, -1.0, 0.0, 0.3, 1.0, 4.0] {
            let (v, d1, _) = custom.conjugate_all(s);
            assert_relative_eq!(v, chi2.conjugate(s), epsilon = 1e-11);
            assert_relative_eq!(d1, chi2.conjugate_prime(s), epsilon = 1e-11);
        }
        let kl_numeric = PhiDivergence::custom(
            "kl-numeric",
            |t: f64| if t == 0.0 { 1.0 } else { t * t.ln() - t + 1.0 },
            |t: f64| t.ln(),
            |t: f64| 1.0 / t,
        )
        .unwrap();
        for &s in &[-4.0, -0.5, 0.0, 0.7, 2.0] {
            assert_relative_eq!(kl_numeric.conjugate(s), s.exp_m1(), epsilon = 1e-11);
        }
    }

    #[test]
    fn divergence_values() {
        let kl = PhiDivergence::kl();
        let chi2 = PhiDivergence::chi2();
        assert_eq!(divergence_value(&[0.25; 4], &kl).unwrap(), 0.0);
        assert_eq!(divergence_value(&[0.25; 4], &chi2).unwrap(), 0.0);
        assert_relative_eq!(divergence_value(&[0.75, 0.25], &chi2).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(divergence_value(&[1.0, 0.0], &kl).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(divergence_value(&[1.5, -0.5], &kl).is_err());
    }

    #[test]
    fn identities_hold() {
        let kl = verify_conjugate_identities(&PhiDivergence::kl());
        assert!(kl.passes(), "{kl:?}");
        assert!((kl.curvature - 1.0).abs() < 1e-8);
        let chi2 = verify_conjugate_identities(&PhiDivergence::chi2());
        assert!(chi2.passes(), "{chi2:?}");
        assert!((chi2.curvature - 0.5).abs() < 1e-8);
        let custom = verify_conjugate_identities(&quadratic_custom());
        assert!(custom.passes(), "{custom:?}");
    }

    #[test]
    fn degenerate_curvature_rejected() {
        let quartic = PhiDivergence::custom(
            "quartic",
            |t| (t - 1.0).powi(4),
            |t| 4.0 * (t - 1.0).powi(3),
            |t| 12.0 * (t - 1.0).powi(2),
        );
        assert!(matches!(quartic, Err(Error::InvalidDivergence(_))));
        let concave = PhiDivergence::custom("concave", |t| -(t - 1.0).powi(2), |t| -2.0 * (t - 1.0), |_| -2.0);
        assert!(concave.is_err());
    }

    proptest! {
        #[test]
        fn fenchel_young(s in -6.0f64..6.0, t in 0.0f64..20.0) {
            for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
                prop_assert!(s * t <= div.phi(t) + div.conjugate(s) + 1e-10);
            }
        }

        #[test]
        fn conjugate_convex_nondecreasing(s in -6.0f64..5.0, h in 1e-3f64..0.5) {
            for div in [PhiDivergence::kl(), PhiDivergence::chi2()] {
                let (a, b, c) = (div.conjugate(s - h), div.conjugate(s), div.conjugate(s + h));
                prop_assert!(a <= b + 1e-12 && b <= c + 1e-12);
                prop_assert!(a + c - 2.0 * b >= -1e-10);
            }
        }
    }
}
