//! Warped-product metric data and the drift / nonlinearity / source
//! coefficients of the radial flow equation.
//!
//! A family supplies f̃(w, t) with w = r², its w-derivative, the radial
//! speed coefficient ξ(w, t), and optionally a closed form for
//! B(w, t) = ½ ∫₀^w ξ(u, t) du. The initial-time profile is the same
//! callable evaluated at t₀, so initial-time compatibility holds
//! structurally.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::cached_rule;

type Surface = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Threshold below which the leading 1/w term of the nonlinearity switches
/// to its series expansion.
pub const SMALL_W_THRESHOLD: f64 = 1e-6;

#[derive(Clone)]
pub struct MetricFamily {
    name: String,
    params: Vec<(String, f64)>,
    n: usize,
    t0: f64,
    horizon: f64,
    f_tilde: Surface,
    df_dw: Surface,
    xi: Surface,
    b_closed: Option<Surface>,
}

impl fmt::Debug for MetricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricFamily")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("t0", &self.t0)
            .field("horizon", &self.horizon)
            .field("params", &self.params)
            .finish()
    }
}

/// Serializable identity of a family for manifests.
#[derive(Debug, Clone, Serialize)]
pub struct MetricFamilyInfo {
    pub name: String,
    pub n: usize,
    pub t0: f64,
    pub horizon: f64,
    pub params: Vec<(String, f64)>,
}

impl MetricFamily {
    /// Assembles a family from raw callables and validates it on a lattice:
    /// all evaluations finite, B(0, t) = 0, and 2 ∂B/∂w = ξ by centered
    /// differences to 1e-6.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: impl Into<String>,
        params: Vec<(String, f64)>,
        n: usize,
        t0: f64,
        horizon: f64,
        f_tilde: Surface,
        df_dw: Surface,
        xi: Surface,
        b_closed: Option<Surface>,
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::domain(format!("manifold dimension must be >= 3, got {n}")));
        }
        let t_cap = (n as f64 - 1.0) / 2.0;
        if !(horizon > 0.0) || horizon >= t_cap {
            return Err(Error::domain(format!(
                "horizon must satisfy 0 < T < (n-1)/2 = {t_cap}, got {horizon}"
            )));
        }
        if !(0.0..horizon).contains(&t0) {
            return Err(Error::domain(format!(
                "t0 must lie in [0, T) = [0, {horizon}), got {t0}"
            )));
        }
        let family = MetricFamily {
            name: name.into(),
            params,
            n,
            t0,
            horizon,
            f_tilde,
            df_dw,
            xi,
            b_closed,
        };
        family.validate_lattice()?;
        Ok(family)
    }

    fn validate_lattice(&self) -> Result<()> {
        let ws = [0.0, 1e-4, 0.01, 0.3, 1.0, 4.0, 25.0, 400.0];
        let ts = [
            self.t0,
            self.t0 + 0.25 * (self.horizon - self.t0),
            self.t0 + 0.9 * (self.horizon - self.t0),
        ];
        for &t in &ts {
            for &w in &ws {
                let vals = [
                    (self.f_tilde)(w, t),
                    (self.df_dw)(w, t),
                    (self.xi)(w, t),
                    self.b_coefficient(w, t),
                ];
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "family '{}' is not finite at (w={w}, t={t})",
                        self.name
                    )));
                }
            }
            if self.b_coefficient(0.0, t).abs() > 1e-14 {
                return Err(Error::domain(format!(
                    "family '{}' violates B(0, t) = 0",
                    self.name
                )));
            }
            // 2 dB/dw = ξ, checked by centered differences.
            for &w in &ws[1..] {
                let h = (1e-5 * w.max(1.0)).min(0.5 * w);
                let db = (self.b_coefficient(w + h, t) - self.b_coefficient(w - h, t)) / (2.0 * h);
                let xi = (self.xi)(w, t);
                if (2.0 * db - xi).abs() > 1e-6 * (1.0 + xi.abs()) {
                    return Err(Error::domain(format!(
                        "family '{}' violates 2 dB/dw = xi at (w={w}, t={t}): {db} vs {xi}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether f̃(0, t) = 0 across the time range, the smooth-closure
    /// condition at the coordinate origin needed for a bounded
    /// nonlinearity.
    pub fn closes_at_origin(&self) -> bool {
        let ts = [self.t0, 0.5 * (self.t0 + self.horizon), 0.99 * self.horizon];
        ts.iter().all(|&t| (self.f_tilde)(0.0, t).abs() <= 1e-12)
    }

    pub fn info(&self) -> MetricFamilyInfo {
        MetricFamilyInfo {
            name: self.name.clone(),
            n: self.n,
            t0: self.t0,
            horizon: self.horizon,
            params: self.params.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lifted radial dimension m = n + 2 in which the fixed-point formula lives.
    pub fn lifted_dim(&self) -> usize {
        self.n + 2
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn f_tilde(&self, w: f64, t: f64) -> f64 {
        (self.f_tilde)(w, t)
    }

    pub fn df_dw(&self, w: f64, t: f64) -> f64 {
        (self.df_dw)(w, t)
    }

    /// Initial-time profile f̃₀ — the same callable frozen at t₀.
    pub fn f_tilde0(&self, w: f64) -> f64 {
        (self.f_tilde)(w, self.t0)
    }

    pub fn df0_dw(&self, w: f64) -> f64 {
        (self.df_dw)(w, self.t0)
    }

    pub fn xi(&self, w: f64, t: f64) -> f64 {
        (self.xi)(w, t)
    }

    /// B(w, t) = ½ ∫₀^w ξ(u, t) du, closed form when supplied, otherwise
    /// Gauss-Legendre quadrature.
    pub fn b_coefficient(&self, w: f64, t: f64) -> f64 {
        if let Some(b) = &self.b_closed {
            return b(w, t);
        }
        if w == 0.0 {
            return 0.0;
        }
        let rule = cached_rule(64);
        0.5 * rule.integrate(0.0, w, |u| (self.xi)(u, t))
    }

    /// Euclidean family: f̃ = ξ = 0. The flow fixed point is identically zero.
    pub fn euclidean(n: usize, horizon: f64, t0: f64) -> Result<Self> {
        Self::from_parts(
            "euclidean",
            vec![],
            n,
            t0,
            horizon,
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            Some(Arc::new(|_, _| 0.0)),
        )
    }

    /// Decaying bump: f̃(w, t) = a(t) w e^(-w) with a(t) = a0 e^(-(t-t0)),
    /// ξ(w, t) = b0 / (1 + w). The w-prefactor keeps f̃(0, t) = 0 so the
    /// nonlinearity stays bounded at the coordinate origin.
    pub fn decaying_bump(n: usize, horizon: f64, t0: f64, a0: f64, b0: f64) -> Result<Self> {
        let amp = move |t: f64| a0 * (-(t - t0)).exp();
        Self::from_parts(
            "decaying-bump",
            vec![("a0".into(), a0), ("b0".into(), b0)],
            n,
            t0,
            horizon,
            Arc::new(move |w, t| amp(t) * w * (-w).exp()),
            Arc::new(move |w, t| amp(t) * (1.0 - w) * (-w).exp()),
            Arc::new(move |w, _| b0 / (1.0 + w)),
            Some(Arc::new(move |w, _| 0.5 * b0 * (1.0 + w).ln())),
        )
    }

    /// Cylinder-like tail: f̃(w, t) = c(t) w/(w + s) tends to the constant
    /// c(t) as w → ∞; ξ(w, t) = xi0/(1 + w)².
    pub fn cylinder_tail(
        n: usize,
        horizon: f64,
        t0: f64,
        c_inf: f64,
        shape: f64,
        xi0: f64,
    ) -> Result<Self> {
        if !(shape > 0.0) {
            return Err(Error::domain("cylinder-tail shape parameter must be positive"));
        }
        let amp = move |t: f64| c_inf * (1.0 + 0.25 * (t - t0));
        Self::from_parts(
            "cylinder-tail",
            vec![("c_inf".into(), c_inf), ("shape".into(), shape), ("xi0".into(), xi0)],
            n,
            t0,
            horizon,
            Arc::new(move |w, t| amp(t) * w / (w + shape)),
            Arc::new(move |w, t| amp(t) * shape / ((w + shape) * (w + shape))),
            Arc::new(move |w, _| xi0 / ((1.0 + w) * (1.0 + w))),
            Some(Arc::new(move |w, _| 0.5 * xi0 * w / (1.0 + w))),
        )
    }

    /// Builds one of the named manufactured families from config values.
    pub fn by_name(
        name: &str,
        n: usize,
        horizon: f64,
        t0: f64,
        params: &[(String, f64)],
    ) -> Result<Self> {
        let get = |key: &str, default: f64| {
            params
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| *v)
                .unwrap_or(default)
        };
        match name {
            "euclidean" => Self::euclidean(n, horizon, t0),
            "decaying-bump" => {
                Self::decaying_bump(n, horizon, t0, get("a0", 0.01), get("b0", 0.01))
            }
            "cylinder-tail" => Self::cylinder_tail(
                n,
                horizon,
                t0,
                get("c_inf", 0.01),
                get("shape", 1.0),
                get("xi0", 0.01),
            ),
            other => Err(Error::domain(format!("unknown metric family '{other}'"))),
        }
    }
}

/// Drift coefficient (n-1) ∂f̃/∂r - r ξ of the radial flow equation, with
/// ∂f̃/∂r = 2 r ∂f̃/∂w evaluated at w = r².
pub fn drift_coefficient(family: &MetricFamily, r: f64, t: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("drift requires r > 0, got {r}")));
    }
    let w = r * r;
    let nf = family.n as f64;
    Ok((nf - 1.0) * 2.0 * r * family.df_dw(w, t) - r * family.xi(w, t))
}

// Exponent gap E(w) = 2 f̃₀(ρ²) - 2 f̃(w, t) with ρ² = w e^(2 ρ̃), and its
// w-derivative.
fn exponent_gap(family: &MetricFamily, rho_tilde: f64, w: f64, t: f64) -> (f64, f64) {
    let stretch = (2.0 * rho_tilde).exp();
    let rho_sq = w * stretch;
    let e = 2.0 * family.f_tilde0(rho_sq) - 2.0 * family.f_tilde(w, t);
    let de = 2.0 * family.df0_dw(rho_sq) * stretch - 2.0 * family.df_dw(w, t);
    (e, de)
}

// Leading (n-1)/w [1 - e^E] term; the series form requires E(0) = 0, i.e.
// f̃(0, ·) = 0 (smooth closure of polar coordinates at the origin).
fn first_term(family: &MetricFamily, rho_tilde: f64, w: f64, t: f64, series: bool) -> f64 {
    let (e, de) = exponent_gap(family, rho_tilde, w, t);
    if series {
        -de * (1.0 + 0.5 * e)
    } else {
        -f64::exp_m1(e) / w
    }
}

fn nonlinearity_terms(family: &MetricFamily, rho_tilde: f64, w: f64, t: f64) -> f64 {
    let nf = family.n as f64 - 1.0;
    let stretch = (2.0 * rho_tilde).exp();
    let rho_sq = w * stretch;
    let first = first_term(family, rho_tilde, w, t, w < SMALL_W_THRESHOLD);
    nf * first + 2.0 * nf * family.df_dw(w, t)
        - 2.0 * nf * (2.0 * family.f_tilde0(rho_sq) + 2.0 * rho_tilde
            - 2.0 * family.f_tilde(w, t))
            .exp()
            * family.df0_dw(rho_sq)
        - 2.0 * family.xi(w, t)
}

/// Nonlinearity G(ρ̃, w, t) of the radial flow equation.
pub fn nonlinearity(family: &MetricFamily, rho_tilde: f64, w: f64, t: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::domain(format!("nonlinearity requires w > 0, got {w}")));
    }
    Ok(nonlinearity_terms(family, rho_tilde, w, t))
}

/// Limit of the nonlinearity as w → 0, finite for families that close
/// smoothly at the origin.
pub fn nonlinearity_at_origin(family: &MetricFamily, rho_tilde: f64, t: f64) -> Result<f64> {
    if !family.closes_at_origin() {
        return Err(Error::domain(format!(
            "family '{}' does not satisfy f_tilde(0, t) = 0; nonlinearity unbounded at origin",
            family.name
        )));
    }
    Ok(nonlinearity_terms(family, rho_tilde, 0.0, t))
}

/// Full source F = drift · ∂ρ̃/∂r + (∂ρ̃/∂r)² + G(ρ̃, r², t).
pub fn full_source(
    family: &MetricFamily,
    r: f64,
    rho_tilde: f64,
    drho_dr: f64,
    t: f64,
) -> Result<f64> {
    let drift = drift_coefficient(family, r, t)?;
    let g = nonlinearity(family, rho_tilde, r * r, t)?;
    Ok(drift * drho_dr + drho_dr * drho_dr + g)
}

/// Round-sphere metadata: dimension and flow time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SphereMetricMeta {
    pub n: usize,
    pub t: f64,
}

impl SphereMetricMeta {
    pub fn new(n: usize, t: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::domain(format!("sphere dimension must be >= 3, got {n}")));
        }
        let cap = (n as f64 - 1.0) / 2.0;
        if !(0.0..cap).contains(&t) {
            return Err(Error::domain(format!(
                "time must lie in [0, (n-1)/2) = [0, {cap}), got {t}"
            )));
        }
        Ok(SphereMetricMeta { n, t })
    }
}

/// Scalar curvature 1/(1 - 2t/(n-1)) of the shrinking round sphere.
pub fn scalar_curvature(meta: &SphereMetricMeta) -> f64 {
    1.0 / (1.0 - 2.0 * meta.t / (meta.n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bump() -> MetricFamily {
        MetricFamily::decaying_bump(3, 0.5, 0.0, 0.05, 0.02).unwrap()
    }

    #[test]
    fn euclidean_family_vanishes_everywhere() {
        let fam = MetricFamily::euclidean(3, 0.5, 0.0).unwrap();
        for &r in &[0.1, 1.0, 5.0] {
            for &t in &[0.0, 0.2, 0.4] {
                assert_eq!(drift_coefficient(&fam, r, t).unwrap(), 0.0);
                assert_eq!(nonlinearity(&fam, 0.3, r * r, t).unwrap(), 0.0);
                assert_eq!(full_source(&fam, r, 0.0, 0.0, t).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn drift_closed_forms() {
        // f̃(w, t) = a e^{-w}, ξ = 0: drift(r=1) = -2a(n-1)e^{-1}. This probe
        // family does not close at the origin, which is fine for the drift.
        let a = 0.3;
        let n = 4;
        let fam = MetricFamily::from_parts(
            "probe",
            vec![],
            n,
            0.0,
            0.5,
            Arc::new(move |w, _| a * (-w).exp()),
            Arc::new(move |w, _| -a * (-w).exp()),
            Arc::new(|_, _| 0.0),
            Some(Arc::new(|_, _| 0.0)),
        )
        .unwrap();
        let expected = -2.0 * a * (n as f64 - 1.0) * (-1.0f64).exp();
        assert_relative_eq!(
            drift_coefficient(&fam, 1.0, 0.1).unwrap(),
            expected,
            max_relative = 1e-14
        );
        // Cross-check by finite-differencing f̃(r², t) in r.
        let h = 1e-6;
        let fd = (n as f64 - 1.0)
            * (fam.f_tilde((1.0 + h) * (1.0 + h), 0.1) - fam.f_tilde((1.0 - h) * (1.0 - h), 0.1))
            / (2.0 * h);
        assert_relative_eq!(drift_coefficient(&fam, 1.0, 0.1).unwrap(), fd, epsilon = 1e-8);

        // f̃ = 0, ξ = β: drift = -rβ.
        let beta = 0.7;
        let fam2 = MetricFamily::from_parts(
            "constant-xi",
            vec![],
            3,
            0.0,
            0.5,
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            Arc::new(move |_, _| beta),
            Some(Arc::new(move |w, _| 0.5 * beta * w)),
        )
        .unwrap();
        assert_relative_eq!(
            drift_coefficient(&fam2, 1.3, 0.0).unwrap(),
            -1.3 * beta,
            max_relative = 1e-14
        );
        assert!(drift_coefficient(&fam2, 0.0, 0.0).is_err());
    }

    #[test]
    fn nonlinearity_reduces_to_xi_at_initial_time() {
        // G(0, w, t0) = -2 ξ(w, t0): the first three terms cancel exactly.
        let fam = bump();
        for &w in &[1e-8, 1e-3, 0.4, 2.0, 30.0] {
            let g = nonlinearity(&fam, 0.0, w, fam.t0()).unwrap();
            assert_relative_eq!(g, -2.0 * fam.xi(w, fam.t0()), max_relative = 1e-10);
        }
    }

    #[test]
    fn nonlinearity_bounded_toward_origin() {
        // The series form of the leading term tracks the direct evaluation
        // with an O(w) defect on a sweep toward 0, and the value approaches
        // the origin limit.
        let fam = bump();
        let t = 0.3;
        let rho = 0.2;
        for &w in &[1e-3, 1e-4, 1e-5] {
            let direct = first_term(&fam, rho, w, t, false);
            let series = first_term(&fam, rho, w, t, true);
            assert!(
                (direct - series).abs() <= 0.5 * w,
                "w = {w}: direct {direct} vs series {series}"
            );
        }
        let near = nonlinearity(&fam, rho, 1e-10, t).unwrap();
        let origin = nonlinearity_at_origin(&fam, rho, t).unwrap();
        assert!((near - origin).abs() < 1e-8);
        assert!(origin.is_finite());
        assert!(nonlinearity(&fam, rho, 0.0, t).is_err());
    }

    #[test]
    fn full_source_is_composition() {
        let fam = bump();
        for &(r, rho, p, t) in &[(0.5, 0.1, -0.2, 0.1), (2.0, -0.3, 0.4, 0.25)] {
            let f = full_source(&fam, r, rho, p, t).unwrap();
            let drift = drift_coefficient(&fam, r, t).unwrap();
            let g = nonlinearity(&fam, rho, r * r, t).unwrap();
            assert_relative_eq!(f, drift * p + p * p + g, max_relative = 1e-14);
        }
        // Euclidean family with gradient p: only the quadratic term survives.
        let eu = MetricFamily::euclidean(3, 0.5, 0.0).unwrap();
        assert_relative_eq!(
            full_source(&eu, 1.0, 0.0, 0.25, 0.1).unwrap(),
            0.0625,
            max_relative = 1e-14
        );
    }

    #[test]
    fn b_consistency_enforced_at_construction() {
        // A family whose closed-form B disagrees with ξ must be rejected.
        let bad = MetricFamily::from_parts(
            "inconsistent",
            vec![],
            3,
            0.0,
            0.5,
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, _| 1.0),
            Some(Arc::new(|w, _| w)), // should be w/2
        );
        assert!(bad.is_err());
    }

    #[test]
    fn quadrature_b_matches_closed_form() {
        let fam = bump();
        let no_closed = MetricFamily::from_parts(
            "bump-no-closed-b",
            vec![],
            3,
            0.0,
            0.5,
            Arc::new(|w, t| 0.05 * (-(t)).exp() * w * (-w).exp()),
            Arc::new(|w, t| 0.05 * (-(t)).exp() * (1.0 - w) * (-w).exp()),
            Arc::new(|w, _| 0.02 / (1.0 + w)),
            None,
        )
        .unwrap();
        for &w in &[0.1, 1.0, 10.0] {
            assert_relative_eq!(
                no_closed.b_coefficient(w, 0.2),
                fam.b_coefficient(w, 0.2),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn sphere_curvature_values() {
        let meta = SphereMetricMeta::new(4, 0.0).unwrap();
        assert_relative_eq!(scalar_curvature(&meta), 1.0, max_relative = 1e-15);
        let meta = SphereMetricMeta::new(4, 0.75).unwrap();
        assert_relative_eq!(scalar_curvature(&meta), 2.0, max_relative = 1e-15);
        // Increasing in t.
        let lo = scalar_curvature(&SphereMetricMeta::new(5, 0.3).unwrap());
        let hi = scalar_curvature(&SphereMetricMeta::new(5, 1.2).unwrap());
        assert!(hi > lo);
        // Rejects t at or beyond (n-1)/2.
        assert!(SphereMetricMeta::new(4, 1.5).is_err());
        assert!(SphereMetricMeta::new(4, 2.0).is_err());
        assert!(SphereMetricMeta::new(4, -0.1).is_err());
    }
}
