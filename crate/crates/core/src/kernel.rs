//! Free-space heat kernel, its radial mode-0 reduction, the heat semigroup
//! on radial fields, and the Duhamel time integral.
//!
//! The mode-0 kernel is the spherical mean of the Gaussian kernel over the
//! source sphere,
//!
//! K(r, r'; τ) = (4πτ)^(-m/2) e^(-(r-r')²/(4τ)) · ⟨e^(a(cosθ-1))⟩,
//! a = r r' / (2τ),
//!
//! where ⟨·⟩ averages against the sin^(m-2)θ weight on [0, π]. With this
//! normalization K(0, r'; τ) = Γ(r'²; τ) and the heat evolution of a radial
//! field v is (e^(τΔ) v)(r) = ∫₀^∞ K(r, r'; τ) v(r') ω_m r'^(m-1) dr' with
//! ω_m the unit-sphere area, so rows integrate to one against the shell
//! weight.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::grid::{RadialField, RadialGrid};
use crate::quad::{cached_rule, sin_power_integral, trapezoid_weights};

/// Dimension and elapsed time for a heat-kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernelParams {
    dim: usize,
    tau: f64,
}

impl HeatKernelParams {
    pub fn new(dim: usize, tau: f64) -> Result<Self> {
        if dim < 3 {
            return Err(Error::domain(format!("dimension must be >= 3, got {dim}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!("elapsed time must be positive, got {tau}")));
        }
        Ok(HeatKernelParams { dim, tau })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Gaussian heat kernel (4πτ)^(-m/2) e^(-d²/(4τ)) as a function of the
/// squared distance d².
pub fn eval_gamma(sq_dist: f64, params: &HeatKernelParams) -> f64 {
    debug_assert!(sq_dist >= 0.0);
    let m = params.dim as f64;
    let tau = params.tau;
    (4.0 * std::f64::consts::PI * tau).powf(-m / 2.0) * (-sq_dist / (4.0 * tau)).exp()
}

// Precomputed angular nodes on [0, π]: cosθ_l - 1 and the combined weight
// w_l sin^(m-2)θ_l (π/2 jacobian included), cached per (dimension, level).
struct AngularRule {
    cos_m1: Vec<f64>,
    weight: Vec<f64>,
}

fn angular_rule(m: usize, level: usize) -> Arc<AngularRule> {
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<AngularRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((m, level))
        .or_insert_with(|| {
            let rule = cached_rule(level);
            let half = 0.5 * std::f64::consts::PI;
            let k = (m - 2) as i32;
            let mut cos_m1 = Vec::with_capacity(level);
            let mut weight = Vec::with_capacity(level);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let theta = half + half * x;
                cos_m1.push(theta.cos() - 1.0);
                weight.push(w * half * theta.sin().powi(k));
            }
            Arc::new(AngularRule { cos_m1, weight })
        })
        .clone()
}

const ANGULAR_LEVELS: [usize; 5] = [64, 128, 256, 512, 1024];

// Fixed-level evaluation on the full interval with precomputed nodes.
fn angular_sum(a: f64, m: usize, level: usize) -> f64 {
    let rule = angular_rule(m, level);
    let mut acc = 0.0;
    for (c, w) in rule.cos_m1.iter().zip(&rule.weight) {
        acc += w * (a * c).exp();
    }
    acc
}

// Angular average of e^(a(cosθ-1)) against sin^(m-2)θ on [0, π], normalized
// by ∫ sin^(m-2). The nodes of a Gauss-Legendre rule cluster at the ends of
// the interval, which is where the integrand peaks (θ = 0), so moderate
// fixed levels resolve it; `angular_levels_agree_with_doubling` pins the
// thresholds. Very peaked integrands (large a) are integrated on the cut
// domain where e^(a(cosθ-1)) stays above e^(-60), with node doubling to a
// 1e-12 relative change.
fn angular_average(a: f64, m: usize) -> f64 {
    debug_assert!(a >= 0.0);
    let value = if a <= 25.0 {
        angular_sum(a, m, 64)
    } else if a <= 200.0 {
        angular_sum(a, m, 128)
    } else {
        let theta_max = (1.0 - 60.0 / a).acos();
        let k = (m - 2) as i32;
        let f = |theta: f64| (a * (theta.cos() - 1.0)).exp() * theta.sin().powi(k);
        let mut prev = f64::NAN;
        let mut v = 0.0;
        for level in ANGULAR_LEVELS {
            let rule = cached_rule(level);
            v = rule.integrate(0.0, theta_max, f);
            if prev.is_finite() && (v - prev).abs() <= 1e-12 * v.abs() + 1e-300 {
                break;
            }
            prev = v;
        }
        v
    };
    value / sin_power_integral(m - 2)
}

/// Mode-0 (shell-averaged) heat kernel K(r, r'; τ).
pub fn mode0_kernel(r: f64, rp: f64, params: &HeatKernelParams) -> f64 {
    debug_assert!(r >= 0.0 && rp >= 0.0);
    if r == 0.0 || rp == 0.0 {
        // The sphere average degenerates at the origin.
        let d = r + rp;
        return eval_gamma(d * d, params);
    }
    let tau = params.tau;
    let a = r * rp / (2.0 * tau);
    let d = r - rp;
    eval_gamma(d * d, params) * angular_average(a, params.dim)
}

/// Closed-form mode-0 kernel in dimension three (two-Gaussian formula).
/// Valid for r, r' > 0; used as an independent oracle for the quadrature.
pub fn mode0_kernel_dim3(r: f64, rp: f64, tau: f64) -> f64 {
    let pre = (4.0 * std::f64::consts::PI * tau).powf(-1.5);
    let em = (-(r - rp) * (r - rp) / (4.0 * tau)).exp();
    let ep = (-(r + rp) * (r + rp) / (4.0 * tau)).exp();
    pre * (tau / (r * rp)) * (em - ep)
}

/// Discretized heat propagator e^(τΔ) on a radial grid.
///
/// Row i holds quadrature weights against field values; rows are normalized
/// to total mass exactly one: when the trapezoid mass falls short of one the
/// deficit is assigned to the last node (constant extension beyond the
/// grid), and when it overshoots the row is rescaled. The propagator is
/// therefore a stochastic matrix: constants are preserved exactly and the
/// discrete maximum principle holds.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Arc<RadialGrid>,
    tau: f64,
    weights: Vec<f64>,
    raw_masses: Vec<f64>,
}

impl KernelMatrix {
    pub fn build(grid: Arc<RadialGrid>, tau: f64, mode: Parallelism) -> Result<Self> {
        let params = HeatKernelParams::new(grid.dim(), tau)?;
        let n = grid.len();
        let radii = grid.radii().to_vec();
        let trap = trapezoid_weights(&radii);
        let omega = grid.unit_sphere_area();
        let m = grid.dim();
        let rows = exec::map_collect(n, mode, |i| {
            let r = radii[i];
            let mut row = vec![0.0; n];
            let mut mass = 0.0;
            for j in 0..n {
                let shell = omega * radii[j].powi(m as i32 - 1);
                let q = trap[j] * mode0_kernel(r, radii[j], &params) * shell;
                row[j] = q;
                mass += q;
            }
            if mass >= 1.0 {
                let inv = 1.0 / mass;
                for q in row.iter_mut() {
                    *q *= inv;
                }
            } else {
                row[n - 1] += 1.0 - mass;
            }
            (row, mass)
        });
        let mut weights = Vec::with_capacity(n * n);
        let mut raw_masses = Vec::with_capacity(n);
        for (row, mass) in rows {
            weights.extend_from_slice(&row);
            raw_masses.push(mass);
        }
        Ok(KernelMatrix {
            grid,
            tau,
            weights,
            raw_masses,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// Pure trapezoid masses ∫ K(r_i, ·; τ) ω_m r'^(m-1) dr' before
    /// normalization; the accuracy certificate for the quadrature.
    pub fn raw_masses(&self) -> &[f64] {
        &self.raw_masses
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        debug_assert_eq!(values.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &self.weights[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * values[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Free heat evolution of a bounded radial field by time `tau`.
pub fn semigroup_apply(u0: &RadialField, tau: f64) -> Result<RadialField> {
    if !(tau > 0.0) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    if u0.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("semigroup input must be bounded".into()));
    }
    let matrix = KernelMatrix::build(u0.grid().clone(), tau, Parallelism::default())?;
    let values = matrix.apply(u0.values());
    RadialField::new(u0.grid().clone(), values, u0.time() + tau)
}

/// Options for [`duhamel_integrate`].
#[derive(Debug, Clone, Copy)]
pub struct DuhamelConfig {
    /// Repeat the integral with halved intervals and report the difference.
    pub richardson_check: bool,
    pub parallelism: Parallelism,
}

impl Default for DuhamelConfig {
    fn default() -> Self {
        DuhamelConfig {
            richardson_check: false,
            parallelism: Parallelism::default(),
        }
    }
}

/// Result of a Duhamel integral with optional step-halving diagnostics.
#[derive(Debug, Clone)]
pub struct DuhamelResult {
    pub field: RadialField,
    /// Sup-norm difference against the halved-step evaluation, when requested.
    pub richardson_gap: Option<f64>,
}

/// ∫_{t0}^{t} e^((t-s)Δ) source(s) ds by the midpoint rule on the supplied
/// time grid; source values at interval midpoints are endpoint averages.
/// Elapsed times below grid resolution are applied as the identity.
pub fn duhamel_integrate(path: &[RadialField], config: &DuhamelConfig) -> Result<DuhamelResult> {
    if path.is_empty() {
        return Err(Error::domain("duhamel path must contain at least one field"));
    }
    let grid = path[0].grid().clone();
    for f in path {
        if !Arc::ptr_eq(f.grid(), &grid) && f.grid().as_ref() != grid.as_ref() {
            return Err(Error::grid("all path fields must share one grid"));
        }
        if f.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("duhamel source contains NaN".into()));
        }
    }
    let t_end = path.last().unwrap().time();
    if path.len() == 1 {
        return Ok(DuhamelResult {
            field: RadialField::zeros(grid, t_end),
            richardson_gap: None,
        });
    }
    let value = integrate_path(path, config.parallelism)?;
    let mut richardson_gap = None;
    if config.richardson_check {
        let refined = refine_path(path)?;
        let fine = integrate_path(&refined, config.parallelism)?;
        let gap = value
            .iter()
            .zip(&fine)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        richardson_gap = Some(gap);
    }
    Ok(DuhamelResult {
        field: RadialField::new(grid, value, t_end)?,
        richardson_gap,
    })
}

fn integrate_path(path: &[RadialField], mode: Parallelism) -> Result<Vec<f64>> {
    let grid = path[0].grid().clone();
    let n = grid.len();
    let t_end = path.last().unwrap().time();
    let tau_resolve = 0.5 * grid.max_spacing() * grid.max_spacing();
    let mut acc = vec![0.0; n];
    for k in 0..path.len() - 1 {
        let dt = path[k + 1].time() - path[k].time();
        if !(dt > 0.0) {
            return Err(Error::domain("path times must be strictly increasing"));
        }
        let mid_t = 0.5 * (path[k].time() + path[k + 1].time());
        let tau = t_end - mid_t;
        let mid: Vec<f64> = path[k]
            .values()
            .iter()
            .zip(path[k + 1].values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let term = if tau < tau_resolve {
            mid
        } else {
            KernelMatrix::build(grid.clone(), tau, mode)?.apply(&mid)
        };
        for (a, v) in acc.iter_mut().zip(&term) {
            *a += dt * v;
        }
    }
    Ok(acc)
}

// Halve every interval by linear interpolation in time.
fn refine_path(path: &[RadialField]) -> Result<Vec<RadialField>> {
    let grid = path[0].grid().clone();
    let mut out = Vec::with_capacity(path.len() * 2 - 1);
    for k in 0..path.len() - 1 {
        out.push(path[k].clone());
        let mid: Vec<f64> = path[k]
            .values()
            .iter()
            .zip(path[k + 1].values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let t_mid = 0.5 * (path[k].time() + path[k + 1].time());
        out.push(RadialField::new(grid.clone(), mid, t_mid)?);
    }
    out.push(path.last().unwrap().clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::unit_sphere_area;
    use approx::assert_relative_eq;

    fn test_grid(m: usize, r_max: f64, n: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::uniform(m, 0.0, r_max, n).unwrap())
    }

    #[test]
    fn gamma_prefactor_identity() {
        // At sq_dist = 0 and τ = 1/(4π) in dimension 3 the prefactor is one.
        let params = HeatKernelParams::new(3, 1.0 / (4.0 * std::f64::consts::PI)).unwrap();
        assert_relative_eq!(eval_gamma(0.0, &params), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn gamma_closed_form_value() {
        let params = HeatKernelParams::new(3, 1.0).unwrap();
        let expected = (4.0 * std::f64::consts::PI).powf(-1.5) * (-1.0f64).exp();
        assert_relative_eq!(eval_gamma(4.0, &params), expected, max_relative = 1e-14);
    }

    #[test]
    fn gamma_rejects_nonpositive_tau() {
        assert!(HeatKernelParams::new(3, 0.0).is_err());
        assert!(HeatKernelParams::new(3, -1.0).is_err());
    }

    #[test]
    fn gamma_normalization_by_quadrature() {
        // ∫ Γ over all space = 1 for several (m, τ).
        for &(m, tau) in &[(3usize, 0.3), (5, 0.7), (4, 1.3)] {
            let params = HeatKernelParams::new(m, tau).unwrap();
            let omega = unit_sphere_area(m);
            let rule = cached_rule(256);
            let r_max = 14.0 * tau.sqrt();
            let mass = rule.integrate(0.0, r_max, |r| {
                eval_gamma(r * r, &params) * omega * r.powi(m as i32 - 1)
            });
            assert_relative_eq!(mass, 1.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn mode0_degenerates_to_gamma_at_origin() {
        let params = HeatKernelParams::new(5, 0.2).unwrap();
        for &rp in &[0.0, 0.3, 1.1] {
            assert_relative_eq!(
                mode0_kernel(0.0, rp, &params),
                eval_gamma(rp * rp, &params),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn angular_levels_agree_with_doubling() {
        // The fixed levels chosen in angular_average must agree with a
        // doubled rule across each regime, for every dimension in use.
        for &m in &[3usize, 4, 5, 7] {
            for k in 0..=60 {
                let a = 25.0 * k as f64 / 60.0;
                let fast = angular_sum(a, m, 64);
                let fine = angular_sum(a, m, 256);
                assert!(
                    (fast - fine).abs() <= 1e-13 * fine.abs(),
                    "m={m}, a={a}: {fast} vs {fine}"
                );
            }
            for k in 0..=40 {
                let a = 25.0 + (200.0 - 25.0) * k as f64 / 40.0;
                let fast = angular_sum(a, m, 128);
                let fine = angular_sum(a, m, 512);
                assert!(
                    (fast - fine).abs() <= 1e-12 * fine.abs(),
                    "m={m}, a={a}: {fast} vs {fine}"
                );
            }
        }
    }

    #[test]
    fn mode0_is_symmetric() {
        let params = HeatKernelParams::new(5, 0.13).unwrap();
        for &(r, rp) in &[(0.2, 0.9), (1.4, 0.05), (2.0, 2.0)] {
            assert_relative_eq!(
                mode0_kernel(r, rp, &params),
                mode0_kernel(rp, r, &params),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn mode0_matches_dim3_closed_form() {
        for &tau in &[0.01, 0.1, 1.0] {
            let params = HeatKernelParams::new(3, tau).unwrap();
            for &r in &[0.05, 0.4, 1.0, 1.9] {
                for &rp in &[0.1, 0.7, 1.5] {
                    let q = mode0_kernel(r, rp, &params);
                    let exact = mode0_kernel_dim3(r, rp, tau);
                    assert!(
                        (q - exact).abs() <= 1e-10 * exact.abs().max(1e-280),
                        "mismatch at r={r}, rp={rp}, tau={tau}: {q} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn mode0_positive_and_dominated_by_aligned_gamma() {
        let params = HeatKernelParams::new(5, 0.05).unwrap();
        for &r in &[0.1, 0.5, 1.0] {
            for &rp in &[0.2, 0.8, 1.6] {
                let k = mode0_kernel(r, rp, &params);
                assert!(k > 0.0);
                let bound = eval_gamma((r - rp) * (r - rp), &params);
                assert!(k <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn matrix_rows_have_unit_mass_and_accurate_raw_mass() {
        let grid = test_grid(5, 12.0, 240);
        let matrix = KernelMatrix::build(grid, 0.25, Parallelism::Sequential).unwrap();
        for (i, &mass) in matrix.raw_masses().iter().enumerate() {
            // Interior rows see the full kernel support.
            let r = matrix.grid().radii()[i];
            if r < 4.0 {
                assert!((mass - 1.0).abs() < 1e-8, "row {i}: raw mass {mass}");
            }
        }
        let ones = vec![1.0; matrix.grid().len()];
        for v in matrix.apply(&ones) {
            assert_relative_eq!(v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn semigroup_preserves_constants_and_sup_norm() {
        let grid = test_grid(3, 8.0, 160);
        let c = RadialField::from_fn(grid.clone(), 0.0, |_| 0.7).unwrap();
        let out = semigroup_apply(&c, 0.3).unwrap();
        for &v in out.values() {
            assert_relative_eq!(v, 0.7, max_relative = 1e-12);
        }
        // Pseudo-random bounded input: sup norm cannot grow.
        let u = RadialField::from_fn(grid, 0.0, |r| (37.0 * r).sin() * (1.0 + r).cos()).unwrap();
        let evolved = semigroup_apply(&u, 0.05).unwrap();
        assert!(evolved.sup_norm() <= u.sup_norm() * (1.0 + 1e-13));
    }

    #[test]
    fn semigroup_matches_gaussian_identity() {
        // e^(τΔ) applied to e^(-r²/(4s)) gives (s/(s+τ))^(m/2) e^(-r²/(4(s+τ))).
        let m = 5;
        let s = 0.5;
        let tau = 0.4;
        let grid = test_grid(m, 16.0, 400);
        let u0 = RadialField::from_fn(grid.clone(), 0.0, |r| (-r * r / (4.0 * s)).exp()).unwrap();
        let out = semigroup_apply(&u0, tau).unwrap();
        let factor = (s / (s + tau)).powf(m as f64 / 2.0);
        for (i, &r) in grid.radii().iter().enumerate() {
            if r > 6.0 {
                break;
            }
            let exact = factor * (-r * r / (4.0 * (s + tau))).exp();
            assert!(
                (out.values()[i] - exact).abs() < 2e-9,
                "r = {r}: {} vs {exact}",
                out.values()[i]
            );
        }
    }

    #[test]
    fn semigroup_composition_property() {
        let grid = test_grid(5, 12.0, 300);
        let u = RadialField::from_fn(grid, 0.0, |r| (-r * r).exp() * (3.0 * r).cos()).unwrap();
        let two_step = semigroup_apply(&semigroup_apply(&u, 0.1).unwrap(), 0.15).unwrap();
        let one_step = semigroup_apply(&u, 0.25).unwrap();
        let gap = two_step
            .values()
            .iter()
            .zip(one_step.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-6, "semigroup gap {gap}");
    }

    #[test]
    fn duhamel_of_unit_source_is_elapsed_time() {
        let grid = test_grid(5, 10.0, 120);
        let times = [0.0, 0.01, 0.02, 0.03, 0.04];
        let path: Vec<RadialField> = times
            .iter()
            .map(|&t| RadialField::from_fn(grid.clone(), t, |_| 1.0).unwrap())
            .collect();
        let out = duhamel_integrate(&path, &DuhamelConfig::default()).unwrap();
        for &v in out.field.values() {
            assert_relative_eq!(v, 0.04, max_relative = 1e-12);
        }
        let grad = out.field.radial_derivative();
        assert!(grad.sup_norm() < 1e-12);
    }

    #[test]
    fn duhamel_empty_window_is_zero() {
        let grid = test_grid(3, 5.0, 64);
        let path = [RadialField::from_fn(grid, 1.0, |r| r).unwrap()];
        let out = duhamel_integrate(&path, &DuhamelConfig::default()).unwrap();
        assert!(out.field.sup_norm() == 0.0);
        assert_eq!(out.field.time(), 1.0);
    }

    #[test]
    fn duhamel_semigroup_source_closed_form() {
        // source(s) = e^((s-t0)Δ) g with g = e^(-r²/(4 s0)). Each integrand
        // e^((t-s)Δ) source(s) collapses to e^((t-t0)Δ) g by the semigroup
        // algebra, so the exact integral is
        // (t-t0) · (s0/(s0+W))^(m/2) e^(-r²/(4(s0+W))) with W = t-t0.
        let m = 5;
        let s0 = 0.5;
        let grid = test_grid(m, 10.0, 288);
        let steps = 128;
        let window = 0.16;
        let dt = window / steps as f64;
        let path: Vec<RadialField> = (0..=steps)
            .map(|k| {
                let t = dt * k as f64;
                let sig = s0 + t;
                let factor = (s0 / sig).powf(m as f64 / 2.0);
                RadialField::from_fn(grid.clone(), t, |r| factor * (-r * r / (4.0 * sig)).exp())
                    .unwrap()
            })
            .collect();
        let out = duhamel_integrate(&path, &DuhamelConfig::default()).unwrap();
        let sig = s0 + window;
        let factor = window * (s0 / sig).powf(m as f64 / 2.0);
        for (i, &r) in grid.radii().iter().enumerate().step_by(40) {
            if r > 6.0 {
                break;
            }
            let exact = factor * (-r * r / (4.0 * sig)).exp();
            assert!(
                (out.field.values()[i] - exact).abs() < 1e-6,
                "r = {r}: {} vs {exact}",
                out.field.values()[i]
            );
        }
    }

    #[test]
    fn duhamel_richardson_reports_step_sensitivity() {
        // A genuinely time-varying evolution at coarse steps: the halved
        // evaluation moves the kernel times, so the gap is a nonzero
        // second-order-small diagnostic. For an exactly step-insensitive
        // path (unit source) the gap vanishes.
        let grid = test_grid(3, 10.0, 96);
        let steps = 8;
        let window = 0.2;
        let dt = window / steps as f64;
        let s0 = 0.1;
        let path: Vec<RadialField> = (0..=steps)
            .map(|k| {
                let t = dt * k as f64;
                let sig = s0 + t;
                let factor = (s0 / sig).powf(1.5);
                RadialField::from_fn(grid.clone(), t, |r| factor * (-r * r / (4.0 * sig)).exp())
                    .unwrap()
            })
            .collect();
        let cfg = DuhamelConfig {
            richardson_check: true,
            parallelism: Parallelism::Sequential,
        };
        let out = duhamel_integrate(&path, &cfg).unwrap();
        let gap = out.richardson_gap.unwrap();
        assert!(gap > 0.0 && gap < 5e-4, "gap {gap}");

        let flat: Vec<RadialField> = (0..=steps)
            .map(|k| RadialField::from_fn(grid.clone(), dt * k as f64, |_| 1.0).unwrap())
            .collect();
        let out = duhamel_integrate(&flat, &cfg).unwrap();
        assert!(out.richardson_gap.unwrap() < 1e-14);
    }
}
