//! Mode-0 Green kernels of the ball, annulus, and exterior domain, built by
//! one radial PDE solve per source shell, plus the comparison, convergence,
//! scaling, and envelope checks on the resulting tables.
//!
//! For a source shell of radius r' the caloric complement g⁰(·, r'; τ)
//! solves the radial heat equation with zero initial data and Dirichlet
//! boundary data equal to the mode-0 trace K(r_boundary, r'; τ) (optionally
//! ramped on by a mollifier η(τ/δ)); the domain kernel is G⁰ = K - g⁰.
//! Shell-averaging commutes with the heat flow, so this reduction is exact
//! in the continuum.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::fitting::{fit_line, fit_power_law, LineFit};
use crate::grid::{one_sided4, RadialGrid};
use crate::kernel::{mode0_kernel, HeatKernelParams};
use crate::pde1d::{EndCondition, RadialHeatStepper, StepData};

/// Version of the discretization scheme; bumping it invalidates caches.
pub const SCHEME_VERSION: u32 = 1;

/// Default tolerance for discrete nonnegativity.
pub const TOL_DISCRETE: f64 = 1e-6;
/// Default tolerance for kernel symmetry.
pub const TOL_SYM: f64 = 1e-5;

/// Radial domain of a Green-kernel build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DomainKind {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    /// Exterior of the unit ball, truncated at `far_radius`.
    Exterior { far_radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dim: usize,
}

impl DomainSpec {
    pub fn ball(radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::domain("ball radius must be positive"));
        }
        Ok(DomainSpec { kind: DomainKind::Ball { radius }, dim })
    }

    pub fn annulus(inner: f64, outer: f64, dim: usize) -> Result<Self> {
        if !(0.0 < inner && inner < outer) {
            return Err(Error::domain(format!(
                "annulus requires 0 < inner < outer, got ({inner}, {outer})"
            )));
        }
        Ok(DomainSpec { kind: DomainKind::Annulus { inner, outer }, dim })
    }

    pub fn exterior(far_radius: f64, dim: usize) -> Result<Self> {
        if !(far_radius >= 10.0) {
            return Err(Error::domain(format!(
                "exterior truncation radius must be >= 10, got {far_radius}"
            )));
        }
        Ok(DomainSpec { kind: DomainKind::Exterior { far_radius }, dim })
    }

    /// Radial interval occupied by the domain.
    pub fn interval(&self) -> (f64, f64) {
        match self.kind {
            DomainKind::Ball { radius } => (0.0, radius),
            DomainKind::Annulus { inner, outer } => (inner, outer),
            DomainKind::Exterior { far_radius } => (1.0, far_radius),
        }
    }

    /// Whether the inner end is a physical Dirichlet boundary with a flux.
    pub fn has_inner_boundary(&self) -> bool {
        !matches!(self.kind, DomainKind::Ball { .. })
    }

    /// Whether the outer end is a physical boundary (false for the
    /// truncated exterior, whose far condition is absorbing).
    pub fn has_outer_boundary(&self) -> bool {
        !matches!(self.kind, DomainKind::Exterior { .. })
    }

    pub fn tag(&self) -> String {
        match self.kind {
            DomainKind::Ball { radius } => format!("ball {radius:.17e}"),
            DomainKind::Annulus { inner, outer } => {
                format!("annulus {inner:.17e} {outer:.17e}")
            }
            DomainKind::Exterior { far_radius } => format!("exterior {far_radius:.17e}"),
        }
    }
}

type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Smooth monotone time ramp η(τ/δ): zero up to δ/2, one from δ on.
#[derive(Clone)]
pub struct Mollifier {
    delta: f64,
    profile: Profile,
}

impl std::fmt::Debug for Mollifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mollifier").field("delta", &self.delta).finish()
    }
}

// C-infinity bridge 0 -> 1 on (0, 1).
fn smooth_bridge(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let phi = |x: f64| (-1.0 / x).exp();
    phi(s) / (phi(s) + phi(1.0 - s))
}

fn standard_profile(x: f64) -> f64 {
    smooth_bridge(2.0 * x - 1.0)
}

impl Mollifier {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_profile(delta, Arc::new(standard_profile))
    }

    /// Custom profile; must be 0 for x <= 1/2, 1 for x >= 1, and monotone.
    pub fn with_profile(delta: f64, profile: Profile) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::domain(format!("delta must lie in (0, 1], got {delta}")));
        }
        if profile(0.5) != 0.0 || profile(0.25) != 0.0 {
            return Err(Error::domain("mollifier profile must vanish for x <= 1/2"));
        }
        if profile(1.0) != 1.0 || profile(1.5) != 1.0 {
            return Err(Error::domain("mollifier profile must be 1 for x >= 1"));
        }
        let mut prev = 0.0;
        for k in 0..=400 {
            let x = 0.5 + 0.5 * k as f64 / 400.0;
            let v = profile(x);
            if !(0.0..=1.0).contains(&v) || v + 1e-12 < prev {
                return Err(Error::domain("mollifier profile must be monotone in [0, 1]"));
            }
            prev = v;
        }
        Ok(Mollifier { delta, profile })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eta(&self, tau: f64) -> f64 {
        (self.profile)(tau / self.delta)
    }
}

/// Options for a kernel-table build.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Time step of the Crank-Nicolson solve.
    pub dt: f64,
    /// Source columns to build, as indices into the restricted grid.
    /// Default: every node except the physical Dirichlet boundaries.
    pub sources: Option<Vec<usize>>,
    /// Keep every k-th step in the flux arrays.
    pub flux_stride: usize,
    pub parallelism: Parallelism,
    /// For exterior builds: re-solve with the far radius doubled and fail
    /// if the reported values move by 1e-6 or more.
    pub certify_truncation: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            dt: 1e-4,
            sources: None,
            flux_stride: 1,
            parallelism: Parallelism::default(),
            certify_truncation: true,
        }
    }
}

/// Discretized mode-0 Green kernel of a domain: values G⁰(r_i, r'_j; τ_k)
/// at snapshot times, the matching free-kernel values K, and dense
/// boundary-flux arrays (inward-normal derivatives in the field variable at
/// the boundary, which by kernel symmetry equal the source-variable fluxes).
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub domain: DomainSpec,
    grid: Arc<RadialGrid>,
    times: Vec<f64>,
    source_indices: Vec<usize>,
    /// [time][source][field], each column contiguous.
    values: Vec<f64>,
    /// Free-space mode-0 kernel on the same lattice, same layout.
    k_values: Vec<f64>,
    flux_times: Vec<f64>,
    /// [source][flux_time]; empty when the domain has no inner boundary.
    flux_inner: Vec<f64>,
    /// [source][flux_time]; empty when the outer end is absorbing.
    flux_outer: Vec<f64>,
    pub mollifier_delta: Option<f64>,
    pub dt: f64,
    pub scheme_version: u32,
}

/// Boundary selector for flux extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxSide {
    Inner,
    Outer,
}

impl KernelTable {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    pub fn source_radii(&self) -> Vec<f64> {
        self.source_indices.iter().map(|&j| self.grid.radii()[j]).collect()
    }

    pub fn n_fields(&self) -> usize {
        self.grid.len()
    }

    /// G⁰ at (field index i, source column jc, time index k).
    pub fn value(&self, i: usize, jc: usize, k: usize) -> f64 {
        self.values[(k * self.source_indices.len() + jc) * self.grid.len() + i]
    }

    /// Free kernel K at the same lattice point.
    pub fn k_value(&self, i: usize, jc: usize, k: usize) -> f64 {
        self.k_values[(k * self.source_indices.len() + jc) * self.grid.len() + i]
    }

    /// Caloric complement g⁰ = K - G⁰ (for mollified tables, the ramped
    /// boundary-data solution).
    pub fn g_value(&self, i: usize, jc: usize, k: usize) -> f64 {
        self.k_value(i, jc, k) - self.value(i, jc, k)
    }

    /// One full column (all field nodes) of G⁰.
    pub fn column(&self, jc: usize, k: usize) -> &[f64] {
        let n = self.grid.len();
        let base = (k * self.source_indices.len() + jc) * n;
        &self.values[base..base + n]
    }

    pub fn flux_times(&self) -> &[f64] {
        &self.flux_times
    }

    /// Dense flux array for one source column, oriented along the inward
    /// normal of the domain (nonnegative up to discretization error).
    pub fn flux(&self, side: FluxSide, jc: usize) -> Result<&[f64]> {
        let nt = self.flux_times.len();
        let arr = match side {
            FluxSide::Inner => {
                if self.flux_inner.is_empty() {
                    return Err(Error::domain("table domain has no inner boundary flux"));
                }
                &self.flux_inner
            }
            FluxSide::Outer => {
                if self.flux_outer.is_empty() {
                    return Err(Error::domain("table domain has no outer boundary flux"));
                }
                &self.flux_outer
            }
        };
        Ok(&arr[jc * nt..(jc + 1) * nt])
    }

    /// Column index of the source at radius `r`, if present.
    pub fn source_column_at(&self, r: f64) -> Option<usize> {
        let tol = 1e-10 * self.grid.last().max(1.0);
        self.source_indices
            .iter()
            .position(|&j| (self.grid.radii()[j] - r).abs() <= tol)
    }

    /// Max |G(i, j) - G(j, i)| over pairs where both indices are sources.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.times.len() {
            for (jc, &j) in self.source_indices.iter().enumerate() {
                for (ic, &i) in self.source_indices.iter().enumerate().skip(jc + 1) {
                    let a = self.value(i, jc, k);
                    let b = self.value(j, ic, k);
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }

    /// ∫ G⁰(·, r'_j; τ_k) ω_m r^(m-1) dr per column and time: at most one,
    /// and decreasing in τ (heat loss through the Dirichlet boundaries).
    pub fn conservation_masses(&self) -> Vec<Vec<f64>> {
        let radii = self.grid.radii();
        let trap = crate::quad::trapezoid_weights(radii);
        let omega = self.grid.unit_sphere_area();
        let m = self.grid.dim() as i32;
        (0..self.source_indices.len())
            .map(|jc| {
                (0..self.times.len())
                    .map(|k| {
                        let col = self.column(jc, k);
                        col.iter()
                            .zip(radii)
                            .zip(&trap)
                            .map(|((&g, &r), &w)| g * w * omega * r.powi(m - 1))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Smallest flux value across all stored fluxes.
    pub fn min_flux(&self) -> f64 {
        self.flux_inner
            .iter()
            .chain(&self.flux_outer)
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Largest Dirichlet-boundary kernel value; near zero for exact
    /// (unmollified) tables.
    pub fn max_boundary_value(&self) -> f64 {
        let n = self.grid.len();
        let mut worst = 0.0f64;
        for k in 0..self.times.len() {
            for jc in 0..self.source_indices.len() {
                if self.domain.has_outer_boundary() {
                    worst = worst.max(self.value(n - 1, jc, k).abs());
                }
                if self.domain.has_inner_boundary() {
                    worst = worst.max(self.value(0, jc, k).abs());
                }
            }
        }
        worst
    }

    pub(crate) fn from_raw_parts(
        domain: DomainSpec,
        grid: Arc<RadialGrid>,
        times: Vec<f64>,
        source_indices: Vec<usize>,
        values: Vec<f64>,
        k_values: Vec<f64>,
        flux_times: Vec<f64>,
        flux_inner: Vec<f64>,
        flux_outer: Vec<f64>,
        mollifier_delta: Option<f64>,
        dt: f64,
        scheme_version: u32,
    ) -> Self {
        KernelTable {
            domain,
            grid,
            times,
            source_indices,
            values,
            k_values,
            flux_times,
            flux_inner,
            flux_outer,
            mollifier_delta,
            dt,
            scheme_version,
        }
    }

    pub(crate) fn raw_values(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.values, &self.k_values, &self.flux_inner, &self.flux_outer)
    }
}

struct BoundaryData<'a> {
    dim: usize,
    source_radius: f64,
    r_lo: f64,
    r_hi: f64,
    left_is_boundary: bool,
    right_is_boundary: bool,
    mollifier: Option<&'a Mollifier>,
}

impl BoundaryData<'_> {
    fn trace(&self, r: f64, tau: f64) -> f64 {
        let params = HeatKernelParams::new(self.dim, tau).expect("tau > 0 inside a step");
        let k = mode0_kernel(r, self.source_radius, &params);
        match self.mollifier {
            Some(m) => k * m.eta(tau),
            None => k,
        }
    }
}

impl StepData for BoundaryData<'_> {
    fn left_value(&self, t: f64) -> f64 {
        if self.left_is_boundary {
            self.trace(self.r_lo, t)
        } else {
            0.0
        }
    }
    fn right_value(&self, t: f64) -> f64 {
        if self.right_is_boundary {
            self.trace(self.r_hi, t)
        } else {
            0.0
        }
    }
}

fn snapshot_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(times.len());
    let mut prev = 0usize;
    for &t in times {
        let k = (t / dt).round() as usize;
        if k == 0 || ((k as f64) * dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::domain(format!(
                "snapshot time {t} is not a positive multiple of dt = {dt}"
            )));
        }
        if k <= prev && prev != 0 {
            return Err(Error::domain("snapshot times must be strictly increasing"));
        }
        prev = k;
        steps.push(k);
    }
    Ok(steps)
}

fn molly(m: Option<&Mollifier>, tau: f64) -> f64 {
    m.map_or(1.0, |m| m.eta(tau))
}

/// Core builder shared by the ball/annulus/exterior entry points.
pub fn build_kernel_table(
    domain: &DomainSpec,
    full_grid: &RadialGrid,
    times: &[f64],
    mollifier: Option<&Mollifier>,
    opts: &BuildOptions,
) -> Result<KernelTable> {
    if full_grid.dim() != domain.dim {
        return Err(Error::grid("grid dimension does not match domain"));
    }
    let (r_lo, r_hi) = domain.interval();
    let grid = Arc::new(full_grid.restrict(r_lo, r_hi)?);
    let n = grid.len();
    if let DomainKind::Annulus { inner, .. } = domain.kind {
        let h_in = grid.radii()[1] - grid.radii()[0];
        if inner < 4.0 * h_in * (1.0 - 1e-9) {
            return Err(Error::grid(format!(
                "inner radius {inner} must be at least 4 grid cells ({})",
                4.0 * h_in
            )));
        }
    }
    let steps = snapshot_steps(times, opts.dt)?;
    let n_steps = *steps.last().ok_or_else(|| Error::domain("need at least one time"))?;
    let left_is_boundary = domain.has_inner_boundary();
    let right_is_boundary = domain.has_outer_boundary();
    let default_sources: Vec<usize> = (0..n)
        .filter(|&j| !(left_is_boundary && j == 0) && j != n - 1)
        .collect();
    let sources = opts.sources.clone().unwrap_or(default_sources);
    if sources.iter().any(|&j| j >= n) {
        return Err(Error::grid("source index outside restricted grid"));
    }
    let left_end = if left_is_boundary {
        EndCondition::Dirichlet
    } else {
        EndCondition::OriginSymmetric
    };
    let stepper = RadialHeatStepper::new(grid.clone(), left_end, EndCondition::Dirichlet)?;

    let flux_steps: Vec<usize> = (1..=n_steps).step_by(opts.flux_stride).collect();
    let flux_times: Vec<f64> = flux_steps.iter().map(|&k| k as f64 * opts.dt).collect();
    let radii = grid.radii().to_vec();

    struct Column {
        snapshots: Vec<Vec<f64>>,
        flux_in: Vec<f64>,
        flux_out: Vec<f64>,
    }

    let columns: Vec<Column> = exec::try_map_collect(sources.len(), opts.parallelism, |jc| {
        let source_radius = radii[sources[jc]];
        let data = BoundaryData {
            dim: domain.dim,
            source_radius,
            r_lo,
            r_hi,
            left_is_boundary,
            right_is_boundary,
            mollifier,
        };
        let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        let mut flux_in = Vec::with_capacity(flux_steps.len());
        let mut flux_out = Vec::with_capacity(flux_steps.len());
        let mut next_snap = 0usize;
        let mut flux_cursor = 0usize;
        let initial = vec![0.0; n];
        stepper.run(&initial, opts.dt, n_steps, &data, |k, t, g| {
            if flux_cursor < flux_steps.len() && flux_steps[flux_cursor] == k {
                let params = HeatKernelParams::new(domain.dim, t).unwrap();
                let eta = molly(mollifier, t);
                let gv = |i: usize| {
                    mode0_kernel(radii[i], source_radius, &params) * eta - g[i]
                };
                if left_is_boundary {
                    // Inward normal at the inner sphere points along +r.
                    flux_in.push(one_sided4(
                        [radii[0], radii[1], radii[2], radii[3]],
                        [gv(0), gv(1), gv(2), gv(3)],
                    ));
                }
                if right_is_boundary {
                    // Inward normal at the outer sphere points along -r.
                    flux_out.push(-one_sided4(
                        [radii[n - 1], radii[n - 2], radii[n - 3], radii[n - 4]],
                        [gv(n - 1), gv(n - 2), gv(n - 3), gv(n - 4)],
                    ));
                }
                flux_cursor += 1;
            }
            if next_snap < steps.len() && steps[next_snap] == k {
                snapshots.push(g.to_vec());
                next_snap += 1;
            }
        })?;
        Ok::<Column, Error>(Column { snapshots, flux_in, flux_out })
    })?;

    // Assemble G = K·η - g in a fixed order (η = 1 without a mollifier).
    let n_src = sources.len();
    let mut values = vec![0.0; steps.len() * n_src * n];
    let mut k_values = vec![0.0; steps.len() * n_src * n];
    let k_rows: Vec<Vec<f64>> = exec::map_collect(steps.len() * n_src, opts.parallelism, |idx| {
        let k = idx / n_src;
        let jc = idx % n_src;
        let tau = steps[k] as f64 * opts.dt;
        let params = HeatKernelParams::new(domain.dim, tau).unwrap();
        let rj = radii[sources[jc]];
        radii.iter().map(|&r| mode0_kernel(r, rj, &params)).collect()
    });
    for k in 0..steps.len() {
        for jc in 0..n_src {
            let base = (k * n_src + jc) * n;
            let krow = &k_rows[k * n_src + jc];
            let g = &columns[jc].snapshots[k];
            for i in 0..n {
                k_values[base + i] = krow[i];
                values[base + i] = krow[i] - g[i];
            }
        }
    }
    let mut flux_inner = Vec::new();
    let mut flux_outer = Vec::new();
    if left_is_boundary {
        flux_inner = vec![0.0; n_src * flux_times.len()];
        for (jc, col) in columns.iter().enumerate() {
            flux_inner[jc * flux_times.len()..(jc + 1) * flux_times.len()]
                .copy_from_slice(&col.flux_in);
        }
    }
    if right_is_boundary {
        flux_outer = vec![0.0; n_src * flux_times.len()];
        for (jc, col) in columns.iter().enumerate() {
            flux_outer[jc * flux_times.len()..(jc + 1) * flux_times.len()]
                .copy_from_slice(&col.flux_out);
        }
    }

    Ok(KernelTable {
        domain: *domain,
        grid,
        times: steps.iter().map(|&k| k as f64 * opts.dt).collect(),
        source_indices: sources,
        values,
        k_values,
        flux_times,
        flux_inner,
        flux_outer,
        mollifier_delta: mollifier.map(|m| m.delta()),
        dt: opts.dt,
        scheme_version: SCHEME_VERSION,
    })
}

/// Ball kernel G⁰_R (exact boundary data).
pub fn build_ball_kernel(
    radius: f64,
    dim: usize,
    grid: &RadialGrid,
    times: &[f64],
    opts: &BuildOptions,
) -> Result<KernelTable> {
    let domain = DomainSpec::ball(radius, dim)?;
    build_kernel_table(&domain, grid, times, None, opts)
}

/// Ball kernel with the boundary data ramped on by η(τ/δ).
pub fn build_ball_kernel_mollified(
    radius: f64,
    dim: usize,
    grid: &RadialGrid,
    times: &[f64],
    mollifier: &Mollifier,
    opts: &BuildOptions,
) -> Result<KernelTable> {
    let domain = DomainSpec::ball(radius, dim)?;
    build_kernel_table(&domain, grid, times, Some(mollifier), opts)
}

/// Annulus kernel G⁰_{R,ε}; with a mollifier the boundary data is ramped.
pub fn build_annulus_kernel(
    inner: f64,
    outer: f64,
    dim: usize,
    grid: &RadialGrid,
    times: &[f64],
    mollifier: Option<&Mollifier>,
    opts: &BuildOptions,
) -> Result<KernelTable> {
    let domain = DomainSpec::annulus(inner, outer, dim)?;
    build_kernel_table(&domain, grid, times, mollifier, opts)
}

/// Exterior kernel truncated at `far_radius` with an absorbing far
/// condition; optionally certified by doubling the truncation radius.
pub fn build_exterior_kernel(
    far_radius: f64,
    dim: usize,
    grid: &RadialGrid,
    times: &[f64],
    opts: &BuildOptions,
) -> Result<KernelTable> {
    let domain = DomainSpec::exterior(far_radius, dim)?;
    let table = build_kernel_table(&domain, grid, times, None, opts)?;
    if opts.certify_truncation {
        let doubled_grid = extend_grid(grid, 2.0 * far_radius)?;
        let doubled_domain = DomainSpec::exterior(2.0 * far_radius, dim)?;
        let mut opts2 = opts.clone();
        // Same physical sources; both restrictions start at r = 1.
        opts2.sources = Some(table.source_indices.clone());
        opts2.certify_truncation = false;
        let doubled = build_kernel_table(&doubled_domain, &doubled_grid, times, None, &opts2)?;
        let mut worst = 0.0f64;
        for k in 0..table.times.len() {
            for jc in 0..table.source_indices.len() {
                for i in 0..table.grid.len() - 1 {
                    worst = worst.max((table.value(i, jc, k) - doubled.value(i, jc, k)).abs());
                }
            }
        }
        if worst >= 1e-6 {
            return Err(Error::Truncation(format!(
                "doubling the far radius moved exterior values by {worst:.3e}; increase far_radius"
            )));
        }
    }
    Ok(table)
}

// Appends uniform nodes (at the trailing spacing) up to `new_max`.
fn extend_grid(grid: &RadialGrid, new_max: f64) -> Result<RadialGrid> {
    let radii = grid.radii();
    let h = radii[radii.len() - 1] - radii[radii.len() - 2];
    let mut out = radii.to_vec();
    let mut r = grid.last() + h;
    while r < new_max - 0.5 * h {
        out.push(r);
        r += h;
    }
    out.push(new_max);
    RadialGrid::new(out, grid.dim())
}

// ---------------------------------------------------------------------------
// Verification reports
// ---------------------------------------------------------------------------

/// Hole-shrinking convergence of annulus kernels toward the ball kernel.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonLimitReport {
    pub eps: Vec<f64>,
    /// sup over the compact window of |G⁰_{R,ε} - G⁰_R| per ε.
    pub sup_diff: Vec<f64>,
    pub monotone_decreasing: bool,
    pub fitted_order: Option<f64>,
    pub window: (f64, f64),
}

/// Compares annulus tables against a ball table over a compact radial
/// window bounded away from the origin; all tables must come from the same
/// full grid with matching times and physical source radii.
pub fn verify_epsilon_limit(
    ball: &KernelTable,
    annuli: &[KernelTable],
    window: (f64, f64),
) -> Result<EpsilonLimitReport> {
    let mut eps = Vec::new();
    let mut sup_diff = Vec::new();
    for ann in annuli {
        let e = match ann.domain.kind {
            DomainKind::Annulus { inner, .. } => inner,
            _ => return Err(Error::domain("epsilon sweep requires annulus tables")),
        };
        let mut sup = 0.0f64;
        for (jc_ann, &rj) in ann.source_radii().iter().enumerate() {
            if rj < window.0 || rj > window.1 {
                continue;
            }
            let jc_ball = ball
                .source_column_at(rj)
                .ok_or_else(|| Error::grid("ball table missing matching source radius"))?;
            for k in 0..ann.times().len() {
                for (i_ann, &r) in ann.grid().radii().iter().enumerate() {
                    if r < window.0 || r > window.1 {
                        continue;
                    }
                    let i_ball = ball
                        .grid()
                        .find_node(r, 1e-10)
                        .ok_or_else(|| Error::grid("field node missing in ball table"))?;
                    let d = (ann.value(i_ann, jc_ann, k) - ball.value(i_ball, jc_ball, k)).abs();
                    sup = sup.max(d);
                }
            }
        }
        eps.push(e);
        sup_diff.push(sup);
    }
    let mut sorted: Vec<(f64, f64)> = eps.iter().copied().zip(sup_diff.iter().copied()).collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let monotone = sorted.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9));
    let fit = fit_power_law(&eps, &sup_diff).map(|f| f.slope);
    Ok(EpsilonLimitReport {
        eps,
        sup_diff,
        monotone_decreasing: monotone,
        fitted_order: fit,
        window,
    })
}

/// Parabolic-scaling identity between two annulus tables.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub eps: f64,
    pub max_rel_mismatch: f64,
    pub max_flux_rel_mismatch: f64,
    pub samples: usize,
}

/// Checks G_{R,ε}(r, r', τ) = ε^(-m) G_{R/ε,1}(r/ε, r'/ε, τ/ε²) between a
/// table on (ε, R) and a reference on (1, R/ε) whose grid and times are the
/// scaled images; also checks the ε^(-m-1) flux form at the inner boundary.
pub fn verify_scaling(
    table: &KernelTable,
    reference: &KernelTable,
    eps: f64,
) -> Result<ScalingReport> {
    let m = table.grid().dim() as i32;
    if reference.grid().len() != table.grid().len() {
        return Err(Error::grid("scaling reference grid size mismatch"));
    }
    for (a, b) in table.grid().radii().iter().zip(reference.grid().radii()) {
        if (a / eps - b).abs() > 1e-9 * b.max(1.0) {
            return Err(Error::grid("reference grid is not the scaled image"));
        }
    }
    for (a, b) in table.times().iter().zip(reference.times()) {
        if (a / (eps * eps) - b).abs() > 1e-9 * b.max(1.0) {
            return Err(Error::grid("reference times are not the scaled image"));
        }
    }
    let scale = eps.powi(-m);
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let mut peak = 0.0f64;
    for k in 0..table.times().len() {
        for jc in 0..table.source_indices().len() {
            for i in 0..table.grid().len() {
                peak = peak.max(table.value(i, jc, k).abs());
            }
        }
    }
    let floor = 1e-9 * peak;
    for k in 0..table.times().len() {
        for jc in 0..table.source_indices().len() {
            for i in 0..table.grid().len() {
                let a = table.value(i, jc, k);
                let b = scale * reference.value(i, jc, k);
                if a.abs() > floor || b.abs() > floor {
                    worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
                    count += 1;
                }
            }
        }
    }
    // Flux form: ∂G_{R,ε}/∂n = ε^(-m-1) ∂G_{R/ε,1}/∂n at scaled arguments.
    let fscale = eps.powi(-m - 1);
    let mut fworst = 0.0f64;
    let mut fpeak = 0.0f64;
    for jc in 0..table.source_indices().len() {
        let fa = table.flux(FluxSide::Inner, jc)?;
        for &v in fa {
            fpeak = fpeak.max(v.abs());
        }
    }
    let ffloor = 1e-6 * fpeak;
    for jc in 0..table.source_indices().len() {
        let fa = table.flux(FluxSide::Inner, jc)?;
        let fb = reference.flux(FluxSide::Inner, jc)?;
        for (a, b) in fa.iter().zip(fb) {
            let bs = fscale * b;
            if a.abs() > ffloor || bs.abs() > ffloor {
                fworst = fworst.max((a - bs).abs() / a.abs().max(bs.abs()));
            }
        }
    }
    Ok(ScalingReport {
        eps,
        max_rel_mismatch: worst,
        max_flux_rel_mismatch: fworst,
        samples: count,
    })
}

/// Domain-monotonicity chain defects (positive parts of the forbidden
/// direction; all should sit below tolerance).
#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    /// max over the lattice of (G_annulus - G_ball)+.
    pub annulus_vs_ball: f64,
    /// max of (G_ball - G_bigger_ball)+.
    pub ball_vs_bigger: f64,
    /// max of (G_bigger_ball - K)+.
    pub bigger_vs_free: f64,
    /// min of G_annulus (nonnegativity).
    pub min_value: f64,
}

/// Checks G⁰_{R,ε} <= G⁰_R <= G⁰_{R'} <= K pointwise on shared lattices.
pub fn comparison_chain(
    annulus: &KernelTable,
    ball: &KernelTable,
    bigger: &KernelTable,
) -> Result<ChainReport> {
    let mut ann_ball = 0.0f64;
    let mut ball_big = 0.0f64;
    let mut big_free = 0.0f64;
    let mut min_value = f64::INFINITY;
    for (jc_a, &rj) in annulus.source_radii().iter().enumerate() {
        let jc_ball = ball
            .source_column_at(rj)
            .ok_or_else(|| Error::grid("ball table missing source radius"))?;
        let jc_big = bigger
            .source_column_at(rj)
            .ok_or_else(|| Error::grid("bigger ball table missing source radius"))?;
        for k in 0..annulus.times().len() {
            for (i_a, &r) in annulus.grid().radii().iter().enumerate() {
                let i_ball = ball
                    .grid()
                    .find_node(r, 1e-10)
                    .ok_or_else(|| Error::grid("field node missing in ball grid"))?;
                let i_big = bigger
                    .grid()
                    .find_node(r, 1e-10)
                    .ok_or_else(|| Error::grid("field node missing in bigger grid"))?;
                let g_a = annulus.value(i_a, jc_a, k);
                let g_m = ball.value(i_ball, jc_ball, k);
                let g_b = bigger.value(i_big, jc_big, k);
                let free = bigger.k_value(i_big, jc_big, k);
                min_value = min_value.min(g_a);
                ann_ball = ann_ball.max(g_a - g_m);
                ball_big = ball_big.max(g_m - g_b);
                big_free = big_free.max(g_b - free);
            }
        }
    }
    Ok(ChainReport {
        annulus_vs_ball: ann_ball,
        ball_vs_bigger: ball_big,
        bigger_vs_free: big_free,
        min_value,
    })
}

/// Mollifier-family ordering and small-δ convergence.
#[derive(Debug, Clone, Serialize)]
pub struct MollifierReport {
    pub deltas: Vec<f64>,
    /// max of (g_δ - g_{δ'})+ for consecutive δ > δ' (larger δ must not
    /// exceed the earlier-ramping smaller-δ complement).
    pub ordering_defect: f64,
    /// max of (g - K)+ (the complement never exceeds the free trace).
    pub trace_defect: f64,
    /// min of g (nonnegativity).
    pub min_g: f64,
    /// sup |g_{δ_min} - g_exact| over times >= `convergence_from`.
    pub convergence_gap: Option<f64>,
    pub convergence_from: f64,
}

/// `tables` must be ordered by decreasing δ and share lattice and sources;
/// `exact` is the unmollified table (the δ → 0 limit).
pub fn mollifier_ordering(
    tables: &[KernelTable],
    exact: Option<&KernelTable>,
    convergence_from: f64,
) -> Result<MollifierReport> {
    if tables.len() < 2 {
        return Err(Error::domain("need at least two mollified tables"));
    }
    let mut deltas = Vec::with_capacity(tables.len());
    for t in tables {
        deltas.push(
            t.mollifier_delta
                .ok_or_else(|| Error::domain("table is not mollified"))?,
        );
    }
    if !deltas.windows(2).all(|w| w[1] < w[0]) {
        return Err(Error::domain("tables must be ordered by decreasing delta"));
    }
    let n = tables[0].grid().len();
    let n_src = tables[0].source_indices().len();
    let n_t = tables[0].times().len();
    let mut ordering = 0.0f64;
    let mut trace = 0.0f64;
    let mut min_g = f64::INFINITY;
    for w in tables.windows(2) {
        let (big_d, small_d) = (&w[0], &w[1]);
        for k in 0..n_t {
            for jc in 0..n_src {
                for i in 0..n {
                    // Smaller δ ramps the data on earlier, so its complement
                    // is larger: g_δ <= g_{δ'} for δ > δ'.
                    ordering =
                        ordering.max(big_d.g_value(i, jc, k) - small_d.g_value(i, jc, k));
                }
            }
        }
    }
    for t in tables {
        for k in 0..n_t {
            for jc in 0..n_src {
                for i in 0..n {
                    let g = t.g_value(i, jc, k);
                    min_g = min_g.min(g);
                    trace = trace.max(g - t.k_value(i, jc, k));
                }
            }
        }
    }
    let convergence_gap = exact.map(|ex| {
        let small = tables.last().unwrap();
        let mut gap = 0.0f64;
        for (k, &t) in small.times().iter().enumerate() {
            if t < convergence_from {
                continue;
            }
            for jc in 0..n_src {
                for i in 0..n {
                    gap = gap.max((small.g_value(i, jc, k) - ex.g_value(i, jc, k)).abs());
                }
            }
        }
        gap
    });
    Ok(MollifierReport {
        deltas,
        ordering_defect: ordering,
        trace_defect: trace,
        min_g,
        convergence_gap,
        convergence_from,
    })
}

// ---------------------------------------------------------------------------
// Envelope fits
// ---------------------------------------------------------------------------

/// Least-squares fit of data to C · pre · τ^(-(m+1)/2) e^(-c d²/τ) in
/// log space.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeFit {
    pub log_c: f64,
    pub c_gauss: f64,
    pub rms_log_residual: f64,
    pub n_samples: usize,
}

/// Fits (log C, c) by linear regression of
/// log(v) + (m+1)/2 log τ - log(prefactor) against d²/τ.
pub fn fit_envelope(
    dist: &[f64],
    tau: &[f64],
    values: &[f64],
    prefactor: &[f64],
    m: usize,
) -> Option<EnvelopeFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let p = (m as f64 + 1.0) / 2.0;
    for i in 0..values.len() {
        if values[i] > 0.0 && prefactor[i] > 0.0 && tau[i] > 0.0 {
            xs.push(dist[i] * dist[i] / tau[i]);
            ys.push(values[i].ln() + p * tau[i].ln() - prefactor[i].ln());
        }
    }
    let fit = fit_line(&xs, &ys)?;
    Some(EnvelopeFit {
        log_c: fit.intercept,
        c_gauss: -fit.slope,
        rms_log_residual: fit.rms_residual,
        n_samples: fit.n_samples,
    })
}

/// Boundary-layer sample window d/√τ for envelope fits: close enough that
/// the flux is resolvable, far enough that the Gaussian factor is active.
pub const ENVELOPE_Z_RANGE: (f64, f64) = (2.0, 3.5);

/// Fits one boundary flux of a table to the envelope form.
pub fn fit_flux_envelope(table: &KernelTable, side: FluxSide) -> Result<Option<EnvelopeFit>> {
    let m = table.grid().dim();
    let (r_lo, r_hi) = table.domain.interval();
    let boundary = match side {
        FluxSide::Inner => r_lo,
        FluxSide::Outer => r_hi,
    };
    let mut dist = Vec::new();
    let mut tau = Vec::new();
    let mut vals = Vec::new();
    let mut pre = Vec::new();
    for (jc, &rj) in table.source_radii().iter().enumerate() {
        let flux = table.flux(side, jc)?;
        let d = (rj - boundary).abs();
        for (kt, &t) in table.flux_times().iter().enumerate() {
            let z = d / t.sqrt();
            if z < ENVELOPE_Z_RANGE.0 || z > ENVELOPE_Z_RANGE.1 {
                continue;
            }
            if flux[kt] <= 1e-12 {
                continue;
            }
            dist.push(d);
            tau.push(t);
            vals.push(flux[kt]);
            pre.push(1.0);
        }
    }
    Ok(fit_envelope(&dist, &tau, &vals, &pre, m))
}

/// Fits table kernel values to the boundary-distance envelope
/// C δ_R(r') τ^(-(m+1)/2) e^(-c (r-r')²/τ) over near-boundary sources.
pub fn fit_kernel_envelope(table: &KernelTable) -> Result<Option<EnvelopeFit>> {
    let m = table.grid().dim();
    let (_, r_hi) = table.domain.interval();
    let mut dist = Vec::new();
    let mut tau = Vec::new();
    let mut vals = Vec::new();
    let mut pre = Vec::new();
    for (jc, &rj) in table.source_radii().iter().enumerate() {
        let delta_r = r_hi - rj;
        if delta_r > 0.15 * r_hi {
            continue;
        }
        for (k, &t) in table.times().iter().enumerate() {
            for (i, &r) in table.grid().radii().iter().enumerate() {
                if r >= rj {
                    continue; // keep the field point deeper than the source
                }
                let d = rj - r;
                let z = d / t.sqrt();
                if z < ENVELOPE_Z_RANGE.0 || z > ENVELOPE_Z_RANGE.1 {
                    continue;
                }
                let v = table.value(i, jc, k);
                if v <= 1e-12 {
                    continue;
                }
                dist.push(d);
                tau.push(t);
                vals.push(v);
                pre.push(delta_r);
            }
        }
    }
    Ok(fit_envelope(&dist, &tau, &vals, &pre, m))
}

/// Aggregate envelope report over ball and annulus tables.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    /// Boundary-distance kernel envelope on the ball.
    pub ball_kernel: Option<EnvelopeFit>,
    /// Outer flux envelope on the ball.
    pub ball_outer_flux: Option<EnvelopeFit>,
    /// Inner flux envelopes per annulus ε.
    pub annulus_inner: Vec<(f64, Option<EnvelopeFit>)>,
    /// Outer flux envelope of the first annulus.
    pub annulus_outer: Option<EnvelopeFit>,
    /// Trend of the fitted inner-flux constant against ε (slope of
    /// log C vs log ε); exploratory, no pass/fail.
    pub c_eps_trend: Option<LineFit>,
    /// Smallest flux value seen across all inputs.
    pub min_flux: f64,
}

pub fn fit_envelopes(ball: &KernelTable, annuli: &[KernelTable]) -> Result<EnvelopeReport> {
    let ball_kernel = fit_kernel_envelope(ball)?;
    let ball_outer_flux = fit_flux_envelope(ball, FluxSide::Outer)?;
    let mut annulus_inner = Vec::new();
    let mut min_flux = ball.min_flux();
    for ann in annuli {
        let e = match ann.domain.kind {
            DomainKind::Annulus { inner, .. } => inner,
            _ => return Err(Error::domain("envelope sweep expects annulus tables")),
        };
        annulus_inner.push((e, fit_flux_envelope(ann, FluxSide::Inner)?));
        min_flux = min_flux.min(ann.min_flux());
    }
    let annulus_outer = match annuli.first() {
        Some(t) => fit_flux_envelope(t, FluxSide::Outer)?,
        None => None,
    };
    let mut eps = Vec::new();
    let mut cs = Vec::new();
    for (e, fit) in &annulus_inner {
        if let Some(f) = fit {
            eps.push(*e);
            cs.push(f.log_c.exp());
        }
    }
    let c_eps_trend = fit_power_law(&eps, &cs);
    Ok(EnvelopeReport {
        ball_kernel,
        ball_outer_flux,
        annulus_inner,
        annulus_outer,
        c_eps_trend,
        min_flux,
    })
}
