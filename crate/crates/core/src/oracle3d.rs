//! Coarse three-dimensional finite-difference heat solver used as an
//! independent oracle for the radial reduction: Crank-Nicolson on a cubic
//! lattice with an embedded domain mask, conjugate-gradient inner solves,
//! and shell averaging onto radial profiles.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::green::{DomainKind, KernelTable};

/// Embedded domain on the cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mask3 {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    /// Whole cube (Dirichlet on the faces); used for scheme verification.
    Cube,
}

/// Node-centered cubic lattice on [-L, L]³ with an embedded mask.
/// Nodes outside the mask are pinned to the boundary data.
#[derive(Debug, Clone)]
pub struct Grid3D {
    half_width: f64,
    n3: usize,
    mask: Mask3,
    interior: Vec<bool>,
}

impl Grid3D {
    pub fn new(half_width: f64, n3: usize, mask: Mask3) -> Result<Self> {
        if n3 % 2 != 0 || n3 < 8 || n3 > 64 {
            return Err(Error::grid(format!(
                "cells per axis must be even and in [8, 64], got {n3}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::grid("half width must be positive"));
        }
        match mask {
            Mask3::Ball { radius } => {
                if radius >= half_width {
                    return Err(Error::grid("ball must fit strictly inside the cube"));
                }
            }
            Mask3::Annulus { inner, outer } => {
                if !(0.0 < inner && inner < outer && outer < half_width) {
                    return Err(Error::grid("annulus must satisfy 0 < inner < outer < L"));
                }
            }
            Mask3::Cube => {}
        }
        let nn = n3 + 1;
        let h = 2.0 * half_width / n3 as f64;
        let mut interior = vec![false; nn * nn * nn];
        for i in 0..nn {
            for j in 0..nn {
                for k in 0..nn {
                    let x = -half_width + h * i as f64;
                    let y = -half_width + h * j as f64;
                    let z = -half_width + h * k as f64;
                    let r = (x * x + y * y + z * z).sqrt();
                    let inside = match mask {
                        Mask3::Ball { radius } => r < radius,
                        Mask3::Annulus { inner, outer } => r > inner && r < outer,
                        Mask3::Cube => {
                            i > 0 && i < nn - 1 && j > 0 && j < nn - 1 && k > 0 && k < nn - 1
                        }
                    };
                    interior[(i * nn + j) * nn + k] = inside;
                }
            }
        }
        Ok(Grid3D { half_width, n3, mask, interior })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n3 as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n3 + 1
    }

    pub fn n_nodes(&self) -> usize {
        let nn = self.n3 + 1;
        nn * nn * nn
    }

    pub fn mask(&self) -> Mask3 {
        self.mask
    }

    pub fn coord(&self, idx: usize) -> (f64, f64, f64) {
        let nn = self.n3 + 1;
        let h = self.spacing();
        let i = idx / (nn * nn);
        let j = (idx / nn) % nn;
        let k = idx % nn;
        (
            -self.half_width + h * i as f64,
            -self.half_width + h * j as f64,
            -self.half_width + h * k as f64,
        )
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }

    /// Samples a function on every node.
    pub fn field_from_fn(&self, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|idx| {
                let (x, y, z) = self.coord(idx);
                f(x, y, z)
            })
            .collect()
    }

    /// Index of the node nearest to a point on the positive x axis.
    pub fn node_on_x_axis(&self, r: f64) -> Result<usize> {
        let nn = self.n3 + 1;
        let h = self.spacing();
        let i = ((r + self.half_width) / h).round() as usize;
        let x = -self.half_width + h * i as f64;
        if (x - r).abs() > 1e-9 * self.half_width {
            return Err(Error::grid(format!(
                "radius {r} does not sit on a lattice node (nearest {x})"
            )));
        }
        let c = self.n3 / 2;
        Ok((i * nn + c) * nn + c)
    }

    /// Normalized product-hat approximation of a point mass at a node:
    /// per-axis weights (1/4, 1/2, 1/4), total integral one.
    pub fn point_source_hat(&self, center: usize) -> Vec<f64> {
        let nn = self.n3 + 1;
        let h = self.spacing();
        let ci = center / (nn * nn);
        let cj = (center / nn) % nn;
        let ck = center % nn;
        let mut field = vec![0.0; self.n_nodes()];
        let w = [0.25, 0.5, 0.25];
        for (di, wi) in w.iter().enumerate() {
            for (dj, wj) in w.iter().enumerate() {
                for (dk, wk) in w.iter().enumerate() {
                    let i = ci + di - 1;
                    let j = cj + dj - 1;
                    let k = ck + dk - 1;
                    field[(i * nn + j) * nn + k] = wi * wj * wk / (h * h * h);
                }
            }
        }
        field
    }
}

fn cg_solve(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    diag: f64,
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    for i in 0..n {
        r[i] = b[i] - ax[i];
    }
    // Diagonal (here scalar) preconditioner.
    let minv = 1.0 / diag;
    let mut z: Vec<f64> = r.iter().map(|v| v * minv).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut ap = vec![0.0; n];
    for iter in 0..max_iter {
        let r_norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tol * b_norm {
            return Ok(iter);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::Solver("conjugate gradient lost positivity".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * minv;
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver("conjugate gradient did not converge".into()))
}

/// Boundary data and volumetric source of a 3-D solve.
pub struct Problem3D<B, S> {
    pub boundary: B,
    pub source: Option<S>,
}

/// No-op source closure type.
pub type NoSource3 = fn(f64, f64, f64, f64) -> f64;

/// Runs the masked Dirichlet heat problem from `initial` over `n_steps` of
/// size `dt` (Crank-Nicolson, two implicit-Euler half-steps first, CG inner
/// solves at 1e-10). Pass `theta` = 1.0 for pure implicit Euler (monotone).
/// The observer sees every accepted state.
#[allow(clippy::too_many_arguments)]
pub fn heat_solve_3d<B, S>(
    grid: &Grid3D,
    initial: &[f64],
    problem: &Problem3D<B, S>,
    dt: f64,
    n_steps: usize,
    theta: f64,
    mut observer: impl FnMut(usize, f64, &[f64]),
) -> Result<Vec<f64>>
where
    B: Fn(f64, f64, f64, f64) -> f64,
    S: Fn(f64, f64, f64, f64) -> f64,
{
    if initial.len() != grid.n_nodes() {
        return Err(Error::grid("initial field does not match lattice"));
    }
    let nn = grid.nodes_per_axis();
    let h = grid.spacing();
    let h2 = h * h;
    let mut u = initial.to_vec();
    // Pin exterior nodes to boundary data at t = 0.
    for idx in 0..u.len() {
        if !grid.is_interior(idx) {
            let (x, y, z) = grid.coord(idx);
            u[idx] = (problem.boundary)(x, y, z, 0.0);
        }
    }
    let stride = [nn * nn, nn, 1];
    let interior_idx: Vec<usize> = (0..u.len()).filter(|&i| grid.is_interior(i)).collect();
    let pos_of: std::collections::HashMap<usize, usize> = interior_idx
        .iter()
        .enumerate()
        .map(|(p, &i)| (i, p))
        .collect();

    let mut t = 0.0;
    let substep = |u: &mut Vec<f64>, t0: f64, dt: f64, theta: f64| -> Result<()> {
        let t1 = t0 + dt;
        let n_int = interior_idx.len();
        // Boundary values at the new level.
        let mut bnd_new = u.clone();
        for idx in 0..bnd_new.len() {
            if !grid.is_interior(idx) {
                let (x, y, z) = grid.coord(idx);
                bnd_new[idx] = (problem.boundary)(x, y, z, t1);
            }
        }
        // rhs = u + (1-θ)dt Δh u (with old boundary) + dt source blend
        //       + θ dt (new-boundary neighbor terms)/h².
        let mut rhs = vec![0.0; n_int];
        for (p, &idx) in interior_idx.iter().enumerate() {
            let mut lap_old = -6.0 * u[idx];
            let mut bnd_terms = 0.0;
            for s in stride {
                for nb in [idx - s, idx + s] {
                    lap_old += u[nb];
                    if !grid.is_interior(nb) {
                        bnd_terms += bnd_new[nb];
                    }
                }
            }
            let (x, y, z) = grid.coord(idx);
            let src = match &problem.source {
                Some(f) => theta * f(x, y, z, t1) + (1.0 - theta) * f(x, y, z, t0),
                None => 0.0,
            };
            rhs[p] = u[idx]
                + (1.0 - theta) * dt * lap_old / h2
                + dt * src
                + theta * dt * bnd_terms / h2;
        }
        // A v = v - θ dt Δh v with zero boundary.
        let apply = |v: &[f64], out: &mut [f64]| {
            for (p, &idx) in interior_idx.iter().enumerate() {
                let mut lap = -6.0 * v[p];
                for s in stride {
                    for nb in [idx - s, idx + s] {
                        if let Some(&q) = pos_of.get(&nb) {
                            lap += v[q];
                        }
                    }
                }
                out[p] = v[p] - theta * dt * lap / h2;
            }
        };
        let mut x: Vec<f64> = interior_idx.iter().map(|&i| u[i]).collect();
        let diag = 1.0 + 6.0 * theta * dt / h2;
        cg_solve(apply, &rhs, &mut x, diag, 1e-10, 10_000)?;
        for (p, &idx) in interior_idx.iter().enumerate() {
            u[idx] = x[p];
        }
        for idx in 0..u.len() {
            if !grid.is_interior(idx) {
                u[idx] = bnd_new[idx];
            }
        }
        Ok(())
    };

    for k in 0..n_steps {
        if k < 2 && theta < 1.0 {
            substep(&mut u, t, 0.5 * dt, 1.0)?;
            substep(&mut u, t + 0.5 * dt, 0.5 * dt, 1.0)?;
        } else {
            substep(&mut u, t, dt, theta)?;
        }
        t = dt * (k + 1) as f64;
        observer(k + 1, t, &u);
    }
    Ok(u)
}

/// Quasi-uniform unit directions (Fibonacci sphere).
pub fn fibonacci_directions(n: usize) -> Vec<(f64, f64, f64)> {
    let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64) / golden;
            (rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect()
}

fn trilinear(grid: &Grid3D, u: &[f64], x: f64, y: f64, z: f64) -> f64 {
    let nn = grid.nodes_per_axis();
    let h = grid.spacing();
    let l = grid.half_width;
    let fx = ((x + l) / h).clamp(0.0, (nn - 1) as f64 - 1e-12);
    let fy = ((y + l) / h).clamp(0.0, (nn - 1) as f64 - 1e-12);
    let fz = ((z + l) / h).clamp(0.0, (nn - 1) as f64 - 1e-12);
    let (i, j, k) = (fx as usize, fy as usize, fz as usize);
    let (sx, sy, sz) = (fx - i as f64, fy - j as f64, fz - k as f64);
    let at = |a: usize, b: usize, c: usize| u[(a * nn + b) * nn + c];
    let mut acc = 0.0;
    for (da, wa) in [(0, 1.0 - sx), (1, sx)] {
        for (db, wb) in [(0, 1.0 - sy), (1, sy)] {
            for (dc, wc) in [(0, 1.0 - sz), (1, sz)] {
                acc += wa * wb * wc * at(i + da, j + db, k + dc);
            }
        }
    }
    acc
}

/// Spherical averages of a lattice field at the given radii.
pub fn shell_average(grid: &Grid3D, u: &[f64], radii: &[f64], n_dirs: usize) -> Vec<f64> {
    let dirs = fibonacci_directions(n_dirs);
    radii
        .iter()
        .map(|&r| {
            let mut acc = 0.0;
            for &(dx, dy, dz) in &dirs {
                acc += trilinear(grid, u, r * dx, r * dy, r * dz);
            }
            acc / n_dirs as f64
        })
        .collect()
}

/// Max over shells of the angular spread relative to the field peak.
pub fn angular_deviation(grid: &Grid3D, u: &[f64], radii: &[f64], n_dirs: usize) -> f64 {
    let dirs = fibonacci_directions(n_dirs);
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut worst = 0.0f64;
    for &r in radii {
        let vals: Vec<f64> = dirs
            .iter()
            .map(|&(dx, dy, dz)| trilinear(grid, u, r * dx, r * dy, r * dz))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        for v in vals {
            worst = worst.max((v - mean).abs() / peak);
        }
    }
    worst
}

/// Outcome of one oracle-vs-table comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub source_radius: f64,
    pub times: Vec<f64>,
    /// Peak-relative deviation per snapshot time.
    pub rel_deviation: Vec<f64>,
    pub max_rel_deviation: f64,
    pub n3: usize,
    /// Max angular spread of the (radial) oracle solution.
    pub angular_spread: f64,
}

/// Oracle configuration for [`compare_radialization`].
#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub n3: usize,
    pub half_width: f64,
    pub dt: f64,
    pub n_dirs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { n3: 64, half_width: 1.25, dt: 2.5e-3, n_dirs: 192 }
    }
}

/// Solves the same Green problem on the 3-D lattice (hat point source at a
/// node on the x axis, zero Dirichlet data) and compares the shell-averaged
/// solution with a mode-0 table column. Dimension must be 3.
pub fn compare_radialization(
    table: &KernelTable,
    source_radius: f64,
    cfg: &OracleConfig,
) -> Result<OracleComparison> {
    if table.grid().dim() != 3 {
        return Err(Error::domain("oracle comparison requires dimension 3"));
    }
    let mask = match table.domain.kind {
        DomainKind::Ball { radius } => Mask3::Ball { radius },
        DomainKind::Annulus { inner, outer } => Mask3::Annulus { inner, outer },
        DomainKind::Exterior { .. } => {
            return Err(Error::domain("oracle comparison does not cover exterior domains"))
        }
    };
    let jc = table
        .source_column_at(source_radius)
        .ok_or_else(|| Error::grid("table has no source column at that radius"))?;
    let grid3 = Grid3D::new(cfg.half_width, cfg.n3, mask)?;
    let center = grid3.node_on_x_axis(source_radius)?;
    let initial = grid3.point_source_hat(center);
    let problem: Problem3D<_, NoSource3> = Problem3D { boundary: |_, _, _, _| 0.0, source: None };
    // Snapshot steps for each table time.
    let mut wanted: Vec<(usize, usize)> = Vec::new(); // (step, time index)
    for (kt, &t) in table.times().iter().enumerate() {
        let k = (t / cfg.dt).round() as usize;
        if ((k as f64) * cfg.dt - t).abs() > 1e-9 {
            return Err(Error::domain("oracle dt must divide the table times"));
        }
        wanted.push((k, kt));
    }
    let n_steps = wanted.iter().map(|&(k, _)| k).max().unwrap();
    let h = grid3.spacing();
    let (r_lo, r_hi) = table.domain.interval();
    let radii: Vec<f64> = table
        .grid()
        .radii()
        .iter()
        .copied()
        .filter(|&r| r >= r_lo + 2.0 * h && r <= r_hi - 2.0 * h)
        .collect();
    let mut rel_deviation = vec![0.0; table.times().len()];
    let mut spread = 0.0f64;
    let mut cursor = 0usize;
    heat_solve_3d(&grid3, &initial, &problem, cfg.dt, n_steps, 0.5, |k, _t, u| {
        while cursor < wanted.len() && wanted[cursor].0 == k {
            let kt = wanted[cursor].1;
            let avg = shell_average(&grid3, u, &radii, cfg.n_dirs);
            let mut peak = 0.0f64;
            for (i, &r) in radii.iter().enumerate() {
                let i_tab = table.grid().find_node(r, 1e-9).unwrap();
                peak = peak.max(table.value(i_tab, jc, kt).abs());
                let _ = i;
            }
            let mut dev = 0.0f64;
            for (i, &r) in radii.iter().enumerate() {
                let i_tab = table.grid().find_node(r, 1e-9).unwrap();
                dev = dev.max((avg[i] - table.value(i_tab, jc, kt)).abs());
            }
            rel_deviation[kt] = dev / peak.max(1e-300);
            spread = spread.max(angular_deviation(&grid3, u, &radii, cfg.n_dirs));
            cursor += 1;
        }
    })?;
    let max_rel_deviation = rel_deviation.iter().copied().fold(0.0, f64::max);
    Ok(OracleComparison {
        source_radius,
        times: table.times().to_vec(),
        rel_deviation,
        max_rel_deviation,
        n3: cfg.n3,
        angular_spread: spread,
    })
}
