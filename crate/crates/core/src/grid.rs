//! Radial grids and radially symmetric fields.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum node count for a usable radial grid.
pub const MIN_NODES: usize = 16;

/// A strictly increasing set of radii together with the ambient dimension.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialGrid {
    radii: Vec<f64>,
    dim: usize,
}

impl RadialGrid {
    pub fn new(radii: Vec<f64>, dim: usize) -> Result<Self> {
        if dim < 3 {
            return Err(Error::grid(format!("dimension must be >= 3, got {dim}")));
        }
        if radii.len() < MIN_NODES {
            return Err(Error::grid(format!(
                "need at least {MIN_NODES} nodes, got {}",
                radii.len()
            )));
        }
        if !radii[0].is_finite() || radii[0] < 0.0 {
            return Err(Error::grid("first radius must be finite and >= 0"));
        }
        for w in radii.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::grid("radii must be finite and strictly increasing"));
            }
        }
        Ok(RadialGrid { radii, dim })
    }

    /// Uniform spacing on [r_lo, r_hi] with n nodes.
    pub fn uniform(dim: usize, r_lo: f64, r_hi: f64, n: usize) -> Result<Self> {
        if !(r_hi > r_lo) {
            return Err(Error::grid("r_hi must exceed r_lo"));
        }
        let h = (r_hi - r_lo) / (n - 1) as f64;
        let radii = (0..n).map(|i| r_lo + h * i as f64).collect();
        Self::new(radii, dim)
    }

    /// Geometric spacing near 0 transitioning to uniform spacing.
    ///
    /// The first `n_geo` intervals shrink geometrically toward the origin so
    /// that power-law behavior r^(2-m) near 0 is resolved, matching the
    /// uniform spacing at the transition radius. The node at r = 0 is kept.
    pub fn graded(dim: usize, r_max: f64, n: usize, r_inner: f64) -> Result<Self> {
        if !(r_max > 0.0) || !(r_inner > 0.0) || r_inner >= r_max / 4.0 {
            return Err(Error::grid("need 0 < r_inner < r_max/4"));
        }
        let n_geo = n / 4;
        let n_uni = n - n_geo - 1;
        // Uniform part covers [r_switch, r_max]; its spacing sets the scale.
        let r_switch = r_max / 8.0;
        let h_uni = (r_max - r_switch) / n_uni as f64;
        // Geometric nodes from r_inner up to r_switch.
        let ratio = (r_switch / r_inner).powf(1.0 / (n_geo - 1) as f64);
        let mut radii = Vec::with_capacity(n);
        radii.push(0.0);
        let mut r = r_inner;
        for _ in 0..n_geo {
            radii.push(r);
            r *= ratio;
        }
        // Snap the last geometric node onto r_switch, then go uniform.
        *radii.last_mut().unwrap() = r_switch;
        for i in 1..=n_uni {
            radii.push(r_switch + h_uni * i as f64);
        }
        *radii.last_mut().unwrap() = r_max;
        Self::new(radii, dim)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.radii[0]
    }

    pub fn last(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    pub fn max_spacing(&self) -> f64 {
        self.radii
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the node equal to `r` within `tol`, if any.
    pub fn find_node(&self, r: f64, tol: f64) -> Option<usize> {
        let i = self
            .radii
            .partition_point(|&x| x < r - tol)
            .min(self.radii.len() - 1);
        if (self.radii[i] - r).abs() <= tol {
            Some(i)
        } else {
            None
        }
    }

    /// Restriction of the grid to the closed interval [r_lo, r_hi].
    /// Both endpoints must already be nodes.
    pub fn restrict(&self, r_lo: f64, r_hi: f64) -> Result<RadialGrid> {
        let tol = 1e-12 * self.last().max(1.0);
        let i0 = self
            .find_node(r_lo, tol)
            .ok_or_else(|| Error::grid(format!("r_lo = {r_lo} is not a grid node")))?;
        let i1 = self
            .find_node(r_hi, tol)
            .ok_or_else(|| Error::grid(format!("r_hi = {r_hi} is not a grid node")))?;
        RadialGrid::new(self.radii[i0..=i1].to_vec(), self.dim)
    }

    /// Surface measure of the unit sphere S^(m-1) in dimension m.
    pub fn unit_sphere_area(&self) -> f64 {
        unit_sphere_area(self.dim)
    }
}

/// |S^(m-1)| = 2 π^(m/2) / Γ(m/2).
pub fn unit_sphere_area(m: usize) -> f64 {
    let mf = m as f64;
    2.0 * std::f64::consts::PI.powf(mf / 2.0) / gamma_half_integer(m)
}

/// Γ(m/2) for integer m ≥ 1 by the recurrence from Γ(1/2) and Γ(1).
pub(crate) fn gamma_half_integer(m: usize) -> f64 {
    let mut value = if m % 2 == 0 {
        1.0
    } else {
        std::f64::consts::PI.sqrt()
    };
    let mut k = if m % 2 == 0 { 2 } else { 1 };
    while k < m {
        value *= k as f64 / 2.0;
        k += 2;
    }
    value
}

/// Samples of a radially symmetric function on a grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    time: f64,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::grid(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values must be finite".into()));
        }
        Ok(RadialField { grid, values, time })
    }

    pub fn zeros(grid: Arc<RadialGrid>, time: f64) -> Self {
        let values = vec![0.0; grid.len()];
        RadialField { grid, values, time }
    }

    pub fn from_fn(grid: Arc<RadialGrid>, time: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.radii().iter().map(|&r| f(r)).collect();
        Self::new(grid, values, time)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Radial derivative by second-order finite differences on the
    /// (possibly nonuniform) grid. Fields are even in r, so the derivative
    /// vanishes at a node sitting exactly at the origin.
    pub fn radial_derivative(&self) -> RadialField {
        let r = self.grid.radii();
        let u = &self.values;
        let n = r.len();
        let mut d = vec![0.0; n];
        for i in 0..n {
            if i == 0 {
                if r[0] == 0.0 {
                    d[0] = 0.0;
                } else {
                    d[0] = one_sided(r[0], r[1], r[2], u[0], u[1], u[2]);
                }
            } else if i == n - 1 {
                d[i] = one_sided(r[n - 1], r[n - 2], r[n - 3], u[n - 1], u[n - 2], u[n - 3]);
            } else {
                let hl = r[i] - r[i - 1];
                let hr = r[i + 1] - r[i];
                d[i] = (u[i + 1] * hl * hl - u[i - 1] * hr * hr
                    + u[i] * (hr * hr - hl * hl))
                    / (hl * hr * (hl + hr));
            }
        }
        RadialField {
            grid: self.grid.clone(),
            values: d,
            time: self.time,
        }
    }

    /// Sup norm plus sup norm of the radial derivative.
    pub fn c1_norm(&self) -> f64 {
        self.sup_norm() + self.radial_derivative().sup_norm()
    }

    /// Linear interpolation within the grid range.
    pub fn interpolate(&self, r: f64) -> Result<f64> {
        let radii = self.grid.radii();
        if r < radii[0] - 1e-12 || r > self.grid.last() + 1e-12 {
            return Err(Error::domain(format!(
                "radius {r} outside sampled range [{}, {}]",
                radii[0],
                self.grid.last()
            )));
        }
        let r = r.clamp(radii[0], self.grid.last());
        let i = radii.partition_point(|&x| x <= r).min(radii.len() - 1);
        if i == 0 {
            return Ok(self.values[0]);
        }
        let (r0, r1) = (radii[i - 1], radii[i]);
        let s = (r - r0) / (r1 - r0);
        Ok(self.values[i - 1] * (1.0 - s) + self.values[i] * s)
    }
}

// Second-order one-sided derivative at x0 from nodes x0, x1, x2. The signed
// spacings keep the Lagrange formula valid for either boundary orientation.
pub(crate) fn one_sided(x0: f64, x1: f64, x2: f64, u0: f64, u1: f64, u2: f64) -> f64 {
    let h1 = x1 - x0;
    let h2 = x2 - x0;
    -u0 * (h1 + h2) / (h1 * h2) + u1 * h2 / (h1 * (h2 - h1)) - u2 * h1 / (h2 * (h2 - h1))
}

// Third-order one-sided derivative at x[0] from four nodes (Lagrange).
pub(crate) fn one_sided4(x: [f64; 4], u: [f64; 4]) -> f64 {
    let mut acc = 0.0;
    for j in 0..4 {
        let mut coeff = if j == 0 {
            let mut s = 0.0;
            for k in 1..4 {
                s += 1.0 / (x[0] - x[k]);
            }
            s
        } else {
            let mut num = 1.0;
            for k in 0..4 {
                if k != j && k != 0 {
                    num *= x[0] - x[k];
                }
            }
            let mut den = 1.0;
            for k in 0..4 {
                if k != j {
                    den *= x[j] - x[k];
                }
            }
            num / den
        };
        coeff *= u[j];
        acc += coeff;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_grids() {
        assert!(RadialGrid::new(vec![0.0; 20], 3).is_err());
        assert!(RadialGrid::uniform(2, 0.0, 1.0, 32).is_err());
        assert!(RadialGrid::uniform(3, 0.0, 1.0, 8).is_err());
        assert!(RadialGrid::new(vec![-1.0, 0.0, 1.0], 3).is_err());
    }

    #[test]
    fn graded_grid_starts_at_zero_and_ends_at_rmax() {
        let g = RadialGrid::graded(5, 1.0, 128, 1e-4).unwrap();
        assert_eq!(g.first(), 0.0);
        assert_relative_eq!(g.last(), 1.0, max_relative = 1e-14);
        assert!(g.radii()[1] <= 2e-4);
    }

    #[test]
    fn sphere_areas_match_known_values() {
        use std::f64::consts::PI;
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI, max_relative = 1e-14);
        assert_relative_eq!(unit_sphere_area(5), 8.0 * PI * PI / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn derivative_is_second_order_on_quadratics() {
        let grid = Arc::new(RadialGrid::uniform(3, 0.0, 2.0, 64).unwrap());
        let f = RadialField::from_fn(grid, 0.0, |r| 3.0 * r * r + 1.0).unwrap();
        let d = f.radial_derivative();
        // Quadratics are differentiated exactly by the 3-point formulas,
        // except at the origin node where evenness is assumed.
        for (i, &r) in f.grid().radii().iter().enumerate().skip(1) {
            assert_relative_eq!(d.values()[i], 6.0 * r, max_relative = 1e-10);
        }
    }

    #[test]
    fn interpolation_and_range_errors() {
        let grid = Arc::new(RadialGrid::uniform(3, 0.0, 1.0, 32).unwrap());
        let f = RadialField::from_fn(grid, 0.0, |r| 2.0 * r).unwrap();
        assert_relative_eq!(f.interpolate(0.51).unwrap(), 1.02, max_relative = 1e-12);
        assert!(f.interpolate(1.2).is_err());
    }

    #[test]
    fn rejects_nan_values() {
        let grid = Arc::new(RadialGrid::uniform(3, 0.0, 1.0, 32).unwrap());
        let mut vals = vec![0.0; 32];
        vals[5] = f64::NAN;
        assert!(RadialField::new(grid, vals, 0.0).is_err());
    }
}
