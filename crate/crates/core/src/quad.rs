//! Quadrature primitives: Gauss–Legendre rules and trapezoid weights.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Nodes and weights of an `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes nodes as roots of the Legendre polynomial P_n by Newton
    /// iteration from the Chebyshev-like initial guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Initial guess (Abramowitz & Stegun 25.4.38).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Integrates `f` over [a, b].
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Process-wide cache of Gauss–Legendre rules keyed by node count.
pub fn cached_rule(n: usize) -> GaussLegendre {
    static CACHE: OnceLock<Mutex<HashMap<usize, GaussLegendre>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard.entry(n).or_insert_with(|| GaussLegendre::new(n)).clone()
}

/// Trapezoid weights for an arbitrary increasing abscissa vector.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2);
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// ∫₀^π sin^k θ dθ by the standard recurrence (exact for integer k ≥ 0).
pub fn sin_power_integral(k: usize) -> f64 {
    let mut even = std::f64::consts::PI; // k = 0
    let mut odd = 2.0; // k = 1
    if k == 0 {
        return even;
    }
    if k == 1 {
        return odd;
    }
    let mut value = 0.0;
    for j in 2..=k {
        let jf = j as f64;
        if j % 2 == 0 {
            even *= (jf - 1.0) / jf;
            value = even;
        } else {
            odd *= (jf - 1.0) / jf;
            value = odd;
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        // Degree up to 15 is exact for an 8-point rule.
        let value = rule.integrate(0.0, 1.0, |x| x.powi(15));
        assert_relative_eq!(value, 1.0 / 16.0, max_relative = 1e-13);
    }

    #[test]
    fn gauss_legendre_matches_analytic_exponential() {
        let rule = GaussLegendre::new(32);
        let value = rule.integrate(0.0, 2.0, f64::exp);
        assert_relative_eq!(value, 2.0f64.exp() - 1.0, max_relative = 1e-14);
    }

    #[test]
    fn sin_powers_match_quadrature() {
        for k in 0..8 {
            let rule = GaussLegendre::new(64);
            let q = rule.integrate(0.0, std::f64::consts::PI, |t| t.sin().powi(k as i32));
            assert_relative_eq!(sin_power_integral(k), q, max_relative = 1e-12);
        }
    }

    #[test]
    fn trapezoid_weights_sum_to_span() {
        let x = [0.0, 0.1, 0.3, 0.7, 1.5];
        let w = trapezoid_weights(&x);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 1.5, max_relative = 1e-15);
    }
}
