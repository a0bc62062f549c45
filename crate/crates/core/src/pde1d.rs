//! One-dimensional radial heat stepper: theta scheme on a (possibly
//! nonuniform) radial grid with the (m-1)/r drift, Rannacher start-up, and
//! Dirichlet or origin-symmetry end conditions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::RadialGrid;

/// End condition of the radial interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndCondition {
    /// Node at r = 0 with even symmetry; the (m-1)/r term is regularized to
    /// m u'' there.
    OriginSymmetric,
    /// Pinned value supplied per step.
    Dirichlet,
}

// Tridiagonal rows of the radial Laplacian L u = u'' + (m-1)/r u'.
struct OperatorRows {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

fn operator_rows(grid: &RadialGrid, left: EndCondition) -> Result<OperatorRows> {
    let r = grid.radii();
    let n = r.len();
    let m = grid.dim() as f64;
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    if left == EndCondition::OriginSymmetric {
        if r[0] != 0.0 {
            return Err(Error::grid("origin-symmetric end requires a node at r = 0"));
        }
        let h = r[1] - r[0];
        diag[0] = -2.0 * m / (h * h);
        sup[0] = 2.0 * m / (h * h);
    }
    for i in 1..n - 1 {
        let hl = r[i] - r[i - 1];
        let hr = r[i + 1] - r[i];
        let cf = (m - 1.0) / r[i];
        sub[i] = 2.0 / (hl * (hl + hr)) - cf * hr / (hl * (hl + hr));
        diag[i] = -2.0 / (hl * hr) + cf * (hr - hl) / (hl * hr);
        sup[i] = 2.0 / (hr * (hl + hr)) + cf * hl / (hr * (hl + hr));
    }
    Ok(OperatorRows { sub, diag, sup })
}

// Thomas solve of a tridiagonal system; `sub[0]` and `sup[n-1]` are unused.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c_star = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Solver("tridiagonal pivot vanished".into()));
    }
    c_star[0] = sup[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c_star[i - 1];
        if denom == 0.0 {
            return Err(Error::Solver("tridiagonal pivot vanished".into()));
        }
        c_star[i] = sup[i] / denom;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_star[i] * rhs[i + 1];
    }
    Ok(())
}

/// Radial theta-scheme stepper with prefactored operator rows.
pub struct RadialHeatStepper {
    grid: Arc<RadialGrid>,
    left: EndCondition,
    right: EndCondition,
    rows: OperatorRows,
}

/// Per-step boundary data and optional volumetric source.
pub trait StepData {
    fn left_value(&self, t: f64) -> f64;
    fn right_value(&self, t: f64) -> f64;
    fn source(&self, _r: f64, _t: f64) -> f64 {
        0.0
    }
}

/// Convenience data from closures.
pub struct FnStepData<L, R, S> {
    pub left: L,
    pub right: R,
    pub source: Option<S>,
}

impl<L: Fn(f64) -> f64, R: Fn(f64) -> f64, S: Fn(f64, f64) -> f64> StepData
    for FnStepData<L, R, S>
{
    fn left_value(&self, t: f64) -> f64 {
        (self.left)(t)
    }
    fn right_value(&self, t: f64) -> f64 {
        (self.right)(t)
    }
    fn source(&self, r: f64, t: f64) -> f64 {
        match &self.source {
            Some(s) => s(r, t),
            None => 0.0,
        }
    }
}

/// No boundary data, no source; placeholder for closures.
pub type NoSource = fn(f64, f64) -> f64;

impl RadialHeatStepper {
    pub fn new(grid: Arc<RadialGrid>, left: EndCondition, right: EndCondition) -> Result<Self> {
        if right != EndCondition::Dirichlet {
            return Err(Error::grid("right end must be Dirichlet"));
        }
        let rows = operator_rows(&grid, left)?;
        Ok(RadialHeatStepper {
            grid,
            left,
            right,
            rows,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    /// One theta step with explicit per-node source values (already blended
    /// in time by the caller); boundary values are for the new time level.
    pub fn theta_step_with_values(
        &self,
        u: &mut [f64],
        dt: f64,
        theta: f64,
        left_value: f64,
        right_value: f64,
        source: &[f64],
    ) -> Result<()> {
        struct Fixed<'a> {
            left: f64,
            right: f64,
            source: &'a [f64],
            radii: &'a [f64],
        }
        impl StepData for Fixed<'_> {
            fn left_value(&self, _: f64) -> f64 {
                self.left
            }
            fn right_value(&self, _: f64) -> f64 {
                self.right
            }
            fn source(&self, r: f64, _: f64) -> f64 {
                // Index lookup by position; radii are strictly increasing.
                let i = self.radii.partition_point(|&x| x < r);
                self.source[i.min(self.source.len() - 1)]
            }
        }
        let data = Fixed {
            left: left_value,
            right: right_value,
            source,
            radii: self.grid.radii(),
        };
        // The blend θ s(t_new) + (1-θ) s(t_old) would double-count a
        // pre-blended source, so integrate it once at full weight.
        self.step_with_split_source(u, 0.0, dt, theta, &data)
    }

    // Theta step where the source is applied at full weight (no time blend);
    // used when the caller supplies an already-blended source.
    fn step_with_split_source(
        &self,
        u: &mut [f64],
        t: f64,
        dt: f64,
        theta: f64,
        data: &dyn StepData,
    ) -> Result<()> {
        self.step_inner(u, t, dt, theta, data, false)
    }

    // One theta step from (t, u) to t + dt, overwriting u.
    fn step(
        &self,
        u: &mut [f64],
        t: f64,
        dt: f64,
        theta: f64,
        data: &dyn StepData,
    ) -> Result<()> {
        self.step_inner(u, t, dt, theta, data, true)
    }

    fn step_inner(
        &self,
        u: &mut [f64],
        t: f64,
        dt: f64,
        theta: f64,
        data: &dyn StepData,
        blend_source: bool,
    ) -> Result<()> {
        let n = u.len();
        let r = self.grid.radii();
        let rows = &self.rows;
        let t_new = t + dt;
        // Explicit part (I + (1-theta) dt L) u + dt * blended source.
        let mut rhs = vec![0.0; n];
        let c_exp = (1.0 - theta) * dt;
        for i in 0..n {
            let mut v = u[i];
            if c_exp != 0.0 {
                let lu = rows.diag[i] * u[i]
                    + if i > 0 { rows.sub[i] * u[i - 1] } else { 0.0 }
                    + if i + 1 < n { rows.sup[i] * u[i + 1] } else { 0.0 };
                v += c_exp * lu;
            }
            let s = if blend_source {
                theta * data.source(r[i], t_new) + (1.0 - theta) * data.source(r[i], t)
            } else {
                data.source(r[i], t)
            };
            rhs[i] = v + dt * s;
        }
        // Implicit matrix (I - theta dt L) with pinned Dirichlet rows.
        let c_imp = theta * dt;
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            sub[i] = -c_imp * rows.sub[i];
            diag[i] = 1.0 - c_imp * rows.diag[i];
            sup[i] = -c_imp * rows.sup[i];
        }
        if self.left == EndCondition::Dirichlet {
            diag[0] = 1.0;
            sup[0] = 0.0;
            rhs[0] = data.left_value(t_new);
        }
        if self.right == EndCondition::Dirichlet {
            diag[n - 1] = 1.0;
            sub[n - 1] = 0.0;
            rhs[n - 1] = data.right_value(t_new);
        }
        thomas(&sub, &diag, &sup, &mut rhs)?;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite state after step to t = {t_new}")));
        }
        u.copy_from_slice(&rhs);
        Ok(())
    }

    /// Runs the scheme from `initial` at t = 0 for `n_steps` of size `dt`.
    ///
    /// Crank-Nicolson with a Rannacher start: the first two steps are taken
    /// as two implicit-Euler half-steps each to damp rough-data modes.
    /// `observer` sees the state after every full step.
    pub fn run(
        &self,
        initial: &[f64],
        dt: f64,
        n_steps: usize,
        data: &dyn StepData,
        mut observer: impl FnMut(usize, f64, &[f64]),
    ) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(Error::domain("dt must be positive"));
        }
        if initial.len() != self.grid.len() {
            return Err(Error::grid("initial data does not match grid"));
        }
        let mut u = initial.to_vec();
        let mut t = 0.0;
        for k in 0..n_steps {
            if k < 2 {
                self.step(&mut u, t, 0.5 * dt, 1.0, data)?;
                self.step(&mut u, t + 0.5 * dt, 0.5 * dt, 1.0, data)?;
            } else {
                self.step(&mut u, t, dt, 0.5, data)?;
            }
            t = dt * (k + 1) as f64;
            observer(k + 1, t, &u);
        }
        Ok(u)
    }
}
