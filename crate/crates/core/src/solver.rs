//! Picard fixed-point engine on time windows: successive substitution of
//! the Duhamel integral with C1-norm tracking, the step rule for the window
//! length, continuation with re-estimated constants, blow-up detection via
//! the norm functional, and the two-trajectory contraction experiment.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::grid::{gamma_half_integer, RadialField, RadialGrid};
use crate::kernel::KernelMatrix;

/// Nonlinear source F(r, ρ, ∂ρ/∂r, t) of the lifted radial equation.
/// Implementations must handle r = 0 (the symmetry axis, where the
/// discrete radial derivative vanishes).
pub trait SourceTerm: Sync + Send {
    fn eval(&self, r: f64, rho: f64, drho_dr: f64, t: f64) -> Result<f64>;
}

/// Source assembled from a metric family: drift · ρ_r + ρ_r² + G(ρ, r², t).
pub struct MetricSource {
    family: crate::metric::MetricFamily,
}

impl MetricSource {
    pub fn new(family: crate::metric::MetricFamily) -> Result<Self> {
        if !family.closes_at_origin() {
            return Err(Error::domain(format!(
                "family '{}' does not close at the origin; source unbounded",
                family.name()
            )));
        }
        Ok(MetricSource { family })
    }

    pub fn family(&self) -> &crate::metric::MetricFamily {
        &self.family
    }
}

impl SourceTerm for MetricSource {
    fn eval(&self, r: f64, rho: f64, drho_dr: f64, t: f64) -> Result<f64> {
        if r == 0.0 {
            let g = crate::metric::nonlinearity_at_origin(&self.family, rho, t)?;
            return Ok(drho_dr * drho_dr + g);
        }
        crate::metric::full_source(&self.family, r, rho, drho_dr, t)
    }
}

/// Base source plus an explicit extra term S(r, t) (manufactured-solution
/// forcing).
pub struct ForcedSource<B> {
    pub base: B,
    pub extra: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl<B: SourceTerm> SourceTerm for ForcedSource<B> {
    fn eval(&self, r: f64, rho: f64, drho_dr: f64, t: f64) -> Result<f64> {
        Ok(self.base.eval(r, rho, drho_dr, t)? + (self.extra)(r, t))
    }
}

/// Space-independent reaction λ(1 + ρ²); constant data follows the scalar
/// equation ρ' = λ(1 + ρ²) exactly, which reaches infinity at
/// t0 + (π/2 - atan ρ0)/λ.
pub struct ReactionSource {
    pub lambda: f64,
}

impl SourceTerm for ReactionSource {
    fn eval(&self, _r: f64, rho: f64, _drho_dr: f64, _t: f64) -> Result<f64> {
        let v = self.lambda * (1.0 + rho * rho);
        if !v.is_finite() {
            return Err(Error::NonFinite("reaction source overflow".into()));
        }
        Ok(v)
    }
}

/// Window-length policy.
#[derive(Debug, Clone, Copy)]
pub enum WindowPolicy {
    /// Step rule min(1, remaining/2, (C1/(C4 + C4·C5'))²) with empirical
    /// constants, capped by `max_window`.
    Auto { max_window: f64 },
    /// Fixed window length (quantized to the time step).
    Fixed { delta: f64 },
}

/// Configuration of the Picard engine.
#[derive(Clone)]
pub struct SolveConfig {
    pub grid: Arc<RadialGrid>,
    pub dt: f64,
    pub window: WindowPolicy,
    /// Iteration stops when the C1 gap between sweeps drops below this.
    pub cauchy_tol: f64,
    pub max_iters: usize,
    /// Norm-functional ceiling declaring numerical blow-up.
    pub blowup_ceiling: f64,
    /// Inflation factor applied to the measured source bound.
    pub safety: f64,
    pub parallelism: Parallelism,
    /// Added to the first Picard guess of every window (contraction
    /// experiments); grid-length vector.
    pub first_guess_perturbation: Option<Vec<f64>>,
}

impl SolveConfig {
    pub fn new(grid: Arc<RadialGrid>, dt: f64) -> Self {
        SolveConfig {
            grid,
            dt,
            window: WindowPolicy::Auto { max_window: 0.1 },
            cauchy_tol: 1e-8,
            max_iters: 40,
            blowup_ceiling: 1e6,
            safety: 2.0,
            parallelism: Parallelism::default(),
            first_guess_perturbation: None,
        }
    }
}

/// Gradient-kernel constant of the step rule: ∫ |∇Γ| dy = c/√τ with
/// c = Γ((m+1)/2)/Γ(m/2), giving ∫₀^δ c/√(t-s) ds = 2c √δ.
pub fn gradient_kernel_constant(m: usize) -> f64 {
    2.0 * gamma_half_integer(m + 1) / gamma_half_integer(m)
}

/// Shared, lazily built heat propagators on one grid, keyed by multiples
/// of half the time step.
pub struct SemigroupCache {
    grid: Arc<RadialGrid>,
    half_dt: f64,
    tau_resolve: f64,
    parallelism: Parallelism,
    map: Mutex<HashMap<u64, Arc<KernelMatrix>>>,
}

impl SemigroupCache {
    pub fn new(grid: Arc<RadialGrid>, dt: f64, parallelism: Parallelism) -> Self {
        let h = grid.max_spacing();
        SemigroupCache {
            grid,
            half_dt: 0.5 * dt,
            tau_resolve: 0.5 * h * h,
            parallelism,
            map: Mutex::new(HashMap::new()),
        }
    }

    fn matrix(&self, key: u64) -> Result<Arc<KernelMatrix>> {
        if let Some(m) = self.map.lock().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let tau = key as f64 * self.half_dt;
        let matrix = Arc::new(KernelMatrix::build(self.grid.clone(), tau, self.parallelism)?);
        let mut guard = self.map.lock().unwrap();
        Ok(guard.entry(key).or_insert(matrix).clone())
    }

    /// Applies e^(τΔ); elapsed times under grid resolution act as the
    /// identity (consistent at second order inside the time integrals).
    pub fn apply(&self, tau: f64, values: &[f64]) -> Result<Vec<f64>> {
        let key = (tau / self.half_dt).round() as u64;
        if ((key as f64) * self.half_dt - tau).abs() > 1e-9 * tau.max(self.half_dt) {
            return Err(Error::domain(format!(
                "elapsed time {tau} is not a multiple of half the time step"
            )));
        }
        if tau < self.tau_resolve || key == 0 {
            return Ok(values.to_vec());
        }
        Ok(self.matrix(key)?.apply(values))
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One window of the continuation together with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub start: f64,
    pub length: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Successive C1 gaps of the Picard sweeps.
    pub gaps: Vec<f64>,
    /// gap[i+1]/gap[i] ratios.
    pub contraction_ratios: Vec<f64>,
    /// Estimated starting norm C1 (after the zero-data floor).
    pub c1: f64,
    /// Inflated empirical source bound C4.
    pub c4: f64,
    /// Analytic gradient-kernel constant C5'.
    pub c5_prime: f64,
    /// Window length suggested by the step rule before quantization.
    pub delta_formula: f64,
    /// Number of halvings applied after failed attempts.
    pub retries: usize,
}

/// Solution of one window.
#[derive(Debug)]
pub struct WindowSolution {
    pub times: Vec<f64>,
    pub fields: Vec<RadialField>,
    pub record: WindowRecord,
}

fn c1_parts(field: &RadialField) -> (f64, f64) {
    (field.sup_norm(), field.radial_derivative().sup_norm())
}

fn c1_norm(field: &RadialField) -> f64 {
    let (a, b) = c1_parts(field);
    a + b
}

// F slices on the window path; errors become blow-up signals with a time.
fn source_slices(
    path: &[RadialField],
    source: &dyn SourceTerm,
    parallelism: Parallelism,
) -> Result<Vec<Vec<f64>>> {
    let radii = path[0].grid().radii().to_vec();
    exec::try_map_collect(path.len(), parallelism, |k| {
        let field = &path[k];
        let t = field.time();
        let deriv = field.radial_derivative();
        let mut out = Vec::with_capacity(radii.len());
        for (j, &r) in radii.iter().enumerate() {
            let v = source
                .eval(r, field.values()[j], deriv.values()[j], t)
                .map_err(|e| Error::BlowupSignal { time: t, detail: e.to_string() })?;
            if !v.is_finite() {
                return Err(Error::BlowupSignal {
                    time: t,
                    detail: format!("source not finite at r = {r}"),
                });
            }
            out.push(v);
        }
        Ok(out)
    })
}

/// One Picard sweep: next(·, t_j) = v(·, t_j) + Σ_k Δt e^((t_j - s_k*)Δ)
/// F_mid_k with midpoint kernel times and endpoint-averaged source values,
/// evaluated on the previous iterate.
pub fn picard_step(
    prev: &[RadialField],
    free_evolution: &[RadialField],
    source: &dyn SourceTerm,
    cache: &SemigroupCache,
    parallelism: Parallelism,
) -> Result<Vec<RadialField>> {
    let m = prev.len() - 1;
    let grid = prev[0].grid().clone();
    let slices = source_slices(prev, source, parallelism)?;
    let mids: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            slices[k]
                .iter()
                .zip(&slices[k + 1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect()
        })
        .collect();
    let times: Vec<f64> = prev.iter().map(|f| f.time()).collect();
    let mut next = Vec::with_capacity(m + 1);
    next.push(prev[0].clone());
    let rest = exec::try_map_collect(m, parallelism, |jj_minus| {
        let jj = jj_minus + 1;
        let t_j = times[jj];
        let mut acc = free_evolution[jj].values().to_vec();
        for k in 0..jj {
            let dt = times[k + 1] - times[k];
            let s_mid = 0.5 * (times[k] + times[k + 1]);
            let term = cache.apply(t_j - s_mid, &mids[k])?;
            for (a, v) in acc.iter_mut().zip(&term) {
                *a += dt * v;
            }
        }
        RadialField::new(grid.clone(), acc, t_j)
    })?;
    next.extend(rest);
    Ok(next)
}

// Sup over the window of the C1 distance between two paths.
fn path_c1_gap(a: &[RadialField], b: &[RadialField]) -> f64 {
    let mut gap = 0.0f64;
    for (fa, fb) in a.iter().zip(b) {
        let mut sup = 0.0f64;
        for (x, y) in fa.values().iter().zip(fb.values()) {
            sup = sup.max((x - y).abs());
        }
        let da = fa.radial_derivative();
        let db = fb.radial_derivative();
        let mut dsup = 0.0f64;
        for (x, y) in da.values().iter().zip(db.values()) {
            dsup = dsup.max((x - y).abs());
        }
        gap = gap.max(sup + dsup);
    }
    gap
}

/// Iterates Picard sweeps on [start, start + window] until the C1 gap
/// drops below the Cauchy tolerance; every iterate must stay within twice
/// the starting norm bound `c1` (with `c4` recorded for the step rule).
#[allow(clippy::too_many_arguments)]
pub fn solve_window(
    initial: &RadialField,
    n_steps: usize,
    source: &dyn SourceTerm,
    cache: &SemigroupCache,
    config: &SolveConfig,
    c1: f64,
    c4: f64,
    delta_formula: f64,
) -> Result<WindowSolution> {
    let dt = config.dt;
    let start = initial.time();
    let grid = initial.grid().clone();
    let times: Vec<f64> = (0..=n_steps).map(|k| start + dt * k as f64).collect();
    // Free evolution of the window data.
    let mut free_evolution = Vec::with_capacity(n_steps + 1);
    free_evolution.push(initial.clone());
    for (k, &t) in times.iter().enumerate().skip(1) {
        let vals = cache.apply(dt * k as f64, initial.values())?;
        free_evolution.push(RadialField::new(grid.clone(), vals, t)?);
    }
    // First guess: the window data frozen in time, optionally perturbed.
    let mut prev: Vec<RadialField> = times
        .iter()
        .map(|&t| {
            let mut f = initial.clone();
            f.set_time(t);
            f
        })
        .collect();
    if let Some(pert) = &config.first_guess_perturbation {
        if pert.len() != grid.len() {
            return Err(Error::grid("perturbation length does not match grid"));
        }
        for f in prev.iter_mut().skip(1) {
            for (v, p) in f.values_mut().iter_mut().zip(pert) {
                *v += p;
            }
        }
    }
    let bound = 2.0 * c1 * (1.0 + 1e-9) + 1e-12;
    let mut gaps: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 2..=config.max_iters.max(2) {
        let next = picard_step(&prev, &free_evolution, source, cache, config.parallelism)?;
        iterations += 1;
        for f in next.iter().skip(1) {
            let norm = c1_norm(f);
            if norm > bound {
                return Err(Error::BoundExceeded { time: f.time(), norm, limit: bound });
            }
        }
        let gap = path_c1_gap(&next, &prev);
        if let Some(&last) = gaps.last() {
            ratios.push(gap / last.max(1e-300));
        }
        gaps.push(gap);
        prev = next;
        if gap < config.cauchy_tol {
            converged = true;
            break;
        }
        // Bail out early on sustained divergence instead of overflowing.
        if ratios.len() >= 2
            && ratios[ratios.len() - 1] >= 1.0
            && ratios[ratios.len() - 2] >= 1.0
            && gap > 100.0 * gaps[0]
        {
            return Err(Error::NoContraction {
                window_start: start,
                ratio: *ratios.last().unwrap(),
            });
        }
    }
    if !converged {
        let ratio = ratios.last().copied().unwrap_or(f64::INFINITY);
        if ratio >= 1.0 || !ratio.is_finite() {
            return Err(Error::NoContraction { window_start: start, ratio });
        }
        // Contracting but out of budget: also a window failure.
        return Err(Error::NoContraction { window_start: start, ratio });
    }
    Ok(WindowSolution {
        times,
        fields: prev,
        record: WindowRecord {
            start,
            length: dt * n_steps as f64,
            iterations,
            converged,
            gaps,
            contraction_ratios: ratios,
            c1,
            c4,
            c5_prime: gradient_kernel_constant(grid.dim()),
            delta_formula,
            retries: 0,
        },
    })
}

/// Norm-functional sample along a trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormSample {
    pub t: f64,
    pub sup: f64,
    pub grad_sup: f64,
}

impl NormSample {
    pub fn total(&self) -> f64 {
        self.sup + self.grad_sup
    }
}

/// Blow-up diagnosis.
#[derive(Debug, Clone, Serialize)]
pub struct BlowupInfo {
    /// Last time at which the norm functional stayed below the ceiling;
    /// a grid-certified lower estimate of the blow-up time.
    pub last_stable_time: f64,
    pub reason: String,
}

/// Continuation outcome: trajectory, per-time norms, window log, blow-up.
pub struct FlowTrajectory {
    pub grid: Arc<RadialGrid>,
    pub times: Vec<f64>,
    pub fields: Vec<RadialField>,
    pub norms: Vec<NormSample>,
    pub windows: Vec<WindowRecord>,
    pub blowup: Option<BlowupInfo>,
    /// Supremum of times reached with finite norms (horizon if no blow-up).
    pub t_end: f64,
}

impl FlowTrajectory {
    pub fn field_at(&self, t: f64) -> Option<&RadialField> {
        let i = self
            .times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-9 * t.abs().max(1.0))?;
        Some(&self.fields[i])
    }
}

// Empirical constants for the step rule, probed on the frozen current
// state across the candidate window.
fn estimate_constants(
    state: &RadialField,
    source: &dyn SourceTerm,
    horizon_probe: f64,
    safety: f64,
) -> Result<(f64, f64)> {
    let deriv = state.radial_derivative();
    let radii = state.grid().radii();
    let mut sup = 0.0f64;
    let t0 = state.time();
    for &t in &[t0, 0.5 * (t0 + horizon_probe), horizon_probe] {
        for (j, &r) in radii.iter().enumerate() {
            let v = source
                .eval(r, state.values()[j], deriv.values()[j], t)
                .map_err(|e| Error::BlowupSignal { time: t, detail: e.to_string() })?;
            sup = sup.max(v.abs());
        }
    }
    let c4 = safety * sup;
    let c1 = c1_norm(state).max(c4).max(1e-8);
    Ok((c1, c4))
}

/// Repeatedly solves windows from `initial` toward `horizon`, re-estimating
/// the constants and window length each time. Stops at the horizon, or
/// earlier with a blow-up diagnosis when the norm functional crosses the
/// ceiling (or windows collapse while the norm is already large).
pub fn continue_to_blowup(
    initial: &RadialField,
    horizon: f64,
    source: &dyn SourceTerm,
    cache: &SemigroupCache,
    config: &SolveConfig,
) -> Result<FlowTrajectory> {
    let dt = config.dt;
    let t0 = initial.time();
    let total_steps = ((horizon - t0) / dt).round();
    if total_steps < 1.0 || ((horizon - t0) - total_steps * dt).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "horizon - t0 = {} must be a positive multiple of dt = {dt}",
            horizon - t0
        )));
    }
    let grid = initial.grid().clone();
    let mut times = vec![t0];
    let mut fields = vec![initial.clone()];
    let mut norms = vec![sample_norm(initial)];
    let mut windows = Vec::new();
    let mut blowup = None;
    let collapse_norm = config.blowup_ceiling.sqrt();

    'outer: while (horizon - times.last().unwrap()) > 0.5 * dt {
        let state = fields.last().unwrap().clone();
        let t_now = state.time();
        let remaining_steps = ((horizon - t_now) / dt).round() as usize;
        let (c1, c4) = match estimate_constants(&state, source, horizon, config.safety) {
            Ok(c) => c,
            Err(Error::BlowupSignal { .. }) => {
                blowup = Some(BlowupInfo {
                    last_stable_time: t_now,
                    reason: "source not finite on the current state".into(),
                });
                break 'outer;
            }
            Err(e) => return Err(e),
        };
        let c5p = gradient_kernel_constant(grid.dim());
        let delta_formula = if c4 > 1e-14 {
            let d = c1 / (c4 + c4 * c5p);
            (d * d).min(1.0).min(0.5 * (horizon - t_now))
        } else {
            horizon - t_now
        };
        let max_window = match config.window {
            WindowPolicy::Auto { max_window } => max_window,
            WindowPolicy::Fixed { delta } => delta,
        };
        let wanted = match config.window {
            WindowPolicy::Auto { .. } => delta_formula.min(max_window),
            WindowPolicy::Fixed { delta } => delta,
        };
        let n_steps = ((wanted / dt).floor() as usize)
            .max(2)
            .min(remaining_steps)
            .max(1);
        let mut n_steps = n_steps;
        let mut retries = 0usize;
        loop {
            match solve_window(&state, n_steps, source, cache, config, c1, c4, delta_formula) {
                Ok(mut sol) => {
                    sol.record.retries = retries;
                    windows.push(sol.record.clone());
                    for (t, f) in sol.times.iter().zip(sol.fields.iter()).skip(1) {
                        times.push(*t);
                        norms.push(sample_norm(f));
                        fields.push(f.clone());
                    }
                    // Ceiling check on the accepted window.
                    if let Some(idx) =
                        norms.iter().position(|n| n.total() > config.blowup_ceiling)
                    {
                        let cut = idx.max(1);
                        times.truncate(cut);
                        fields.truncate(cut);
                        norms.truncate(cut);
                        blowup = Some(BlowupInfo {
                            last_stable_time: *times.last().unwrap(),
                            reason: format!(
                                "norm functional exceeded ceiling {:.3e}",
                                config.blowup_ceiling
                            ),
                        });
                        break 'outer;
                    }
                    break;
                }
                Err(
                    Error::BoundExceeded { .. }
                    | Error::NoContraction { .. }
                    | Error::BlowupSignal { .. },
                ) if n_steps > 2 => {
                    // Halve the window and retry.
                    n_steps = (n_steps / 2).max(2);
                    retries += 1;
                }
                Err(
                    e @ (Error::BoundExceeded { .. }
                    | Error::NoContraction { .. }
                    | Error::BlowupSignal { .. }),
                ) => {
                    let norm_now = norms.last().unwrap().total();
                    if norm_now >= collapse_norm {
                        blowup = Some(BlowupInfo {
                            last_stable_time: t_now,
                            reason: format!(
                                "window collapse at minimal step with norm {norm_now:.3e}: {e}"
                            ),
                        });
                        break 'outer;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
    }
    let t_end = *times.last().unwrap();
    Ok(FlowTrajectory {
        grid,
        times,
        fields,
        norms,
        windows,
        blowup,
        t_end,
    })
}

fn sample_norm(f: &RadialField) -> NormSample {
    let (sup, grad_sup) = c1_parts(f);
    NormSample { t: f.time(), sup, grad_sup }
}

/// Growth curve E(t) = sup_{s <= t} of the C1 distance between two
/// trajectories on the same lattice, and the verdict at the final time.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub times: Vec<f64>,
    pub e_curve: Vec<f64>,
    pub final_e: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn uniqueness_gap(
    a: &FlowTrajectory,
    b: &FlowTrajectory,
    tolerance: f64,
) -> Result<UniquenessReport> {
    if a.grid.as_ref() != b.grid.as_ref() {
        return Err(Error::grid("trajectories live on different grids"));
    }
    let n = a.times.len().min(b.times.len());
    let mut e_curve = Vec::with_capacity(n);
    let mut running = 0.0f64;
    for i in 0..n {
        if (a.times[i] - b.times[i]).abs() > 1e-9 {
            return Err(Error::domain("trajectory time grids differ"));
        }
        let mut sup = 0.0f64;
        for (x, y) in a.fields[i].values().iter().zip(b.fields[i].values()) {
            sup = sup.max((x - y).abs());
        }
        let da = a.fields[i].radial_derivative();
        let db = b.fields[i].radial_derivative();
        let mut dsup = 0.0f64;
        for (x, y) in da.values().iter().zip(db.values()) {
            dsup = dsup.max((x - y).abs());
        }
        running = running.max(sup + dsup);
        e_curve.push(running);
    }
    let final_e = *e_curve.last().unwrap_or(&0.0);
    Ok(UniquenessReport {
        times: a.times[..n].to_vec(),
        e_curve,
        final_e,
        tolerance,
        pass: final_e <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricFamily;

    fn grid(m: usize, r_max: f64, n: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::uniform(m, 0.0, r_max, n).unwrap())
    }

    struct ZeroSource;
    impl SourceTerm for ZeroSource {
        fn eval(&self, _: f64, _: f64, _: f64, _: f64) -> Result<f64> {
            Ok(0.0)
        }
    }

    struct UnitSource;
    impl SourceTerm for UnitSource {
        fn eval(&self, _: f64, _: f64, _: f64, _: f64) -> Result<f64> {
            Ok(1.0)
        }
    }

    #[test]
    fn gradient_kernel_constant_known_values() {
        // m = 3: 2 Γ(2)/Γ(3/2) = 2/(√π/2) = 4/√π.
        let c3 = gradient_kernel_constant(3);
        approx::assert_relative_eq!(
            c3,
            4.0 / std::f64::consts::PI.sqrt(),
            max_relative = 1e-14
        );
        // m = 5: 2 Γ(3)/Γ(5/2) = 4/(3√π/4) = 16/(3√π).
        let c5 = gradient_kernel_constant(5);
        approx::assert_relative_eq!(
            c5,
            16.0 / (3.0 * std::f64::consts::PI.sqrt()),
            max_relative = 1e-14
        );
    }

    #[test]
    fn zero_source_fixed_point_in_one_sweep() {
        let g = grid(5, 20.0, 64);
        let config = SolveConfig::new(g.clone(), 1e-3);
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::zeros(g, 0.0);
        let sol = solve_window(&initial, 8, &ZeroSource, &cache, &config, 1e-8, 0.0, 1.0)
            .unwrap();
        assert_eq!(sol.record.iterations, 1);
        for f in &sol.fields {
            assert_eq!(f.sup_norm(), 0.0);
        }
    }

    #[test]
    fn unit_source_integrates_time_exactly() {
        let g = grid(5, 20.0, 64);
        let config = SolveConfig::new(g.clone(), 1e-3);
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::zeros(g, 0.0);
        // c1/c4 sized so the 2C1 bound admits the linear-in-time growth.
        let sol =
            solve_window(&initial, 10, &UnitSource, &cache, &config, 1.0, 2.0, 1.0).unwrap();
        for (k, f) in sol.fields.iter().enumerate() {
            let expect = 1e-3 * k as f64;
            for &v in f.values() {
                assert!((v - expect).abs() < 1e-12, "step {k}: {v} vs {expect}");
            }
        }
        // Constant field: spatial gradient identically zero.
        assert!(sol.fields.last().unwrap().radial_derivative().sup_norm() < 1e-14);
    }

    #[test]
    fn oversized_window_fails_to_contract() {
        // Strong reaction over a long window: successive sweeps diverge.
        let g = grid(5, 20.0, 48);
        let mut config = SolveConfig::new(g.clone(), 0.05);
        config.max_iters = 12;
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::from_fn(g, 0.0, |_| 0.5).unwrap();
        let err = solve_window(
            &initial,
            40, // window length 2.0 with λ = 4: λ δ >> 1
            &ReactionSource { lambda: 4.0 },
            &cache,
            &config,
            1e30, // bound out of the way so only contraction can fail
            8.0,
            2.0,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::NoContraction { .. }),
            "unexpected error {err}"
        );
    }

    #[test]
    fn euclidean_continuation_stays_identically_zero() {
        let fam = MetricFamily::euclidean(3, 0.5, 0.0).unwrap();
        let g = grid(5, 20.0, 64);
        let config = SolveConfig::new(g.clone(), 2.5e-3);
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::zeros(g, 0.0);
        let source = MetricSource::new(fam).unwrap();
        let traj = continue_to_blowup(&initial, 0.5, &source, &cache, &config).unwrap();
        assert!(traj.blowup.is_none());
        assert_eq!(traj.t_end, 0.5);
        for n in &traj.norms {
            assert_eq!(n.total(), 0.0);
        }
    }

    #[test]
    fn reaction_blowup_matches_scalar_solution() {
        // F = λ(1 + ρ²) with constant-zero data: exact solution
        // tan(λ(t - t0)) in space-constant form; numerical blow-up must be
        // declared near t0 + (π/2)/λ.
        let lambda = 20.0;
        let g = grid(5, 20.0, 48);
        let mut config = SolveConfig::new(g.clone(), 2e-4);
        config.blowup_ceiling = 1e3;
        config.window = WindowPolicy::Auto { max_window: 0.02 };
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::zeros(g, 0.0);
        let horizon = 0.16; // beyond the pole at π/40 ≈ 0.0785
        let traj =
            continue_to_blowup(&initial, horizon, &ReactionSource { lambda }, &cache, &config)
                .unwrap();
        let info = traj.blowup.expect("blow-up must be detected");
        let pole = std::f64::consts::FRAC_PI_2 / lambda;
        assert!(
            (info.last_stable_time - pole).abs() < 0.1 * pole,
            "detected {} vs pole {pole}",
            info.last_stable_time
        );
        // Norm growth is monotone along the trajectory.
        for w in traj.norms.windows(2) {
            assert!(w[1].total() >= w[0].total() - 1e-12);
        }
        // The trajectory agrees with tan(λ t) while it lasts.
        for n in &traj.norms {
            let exact = (lambda * n.t).tan();
            if exact < 50.0 {
                assert!(
                    (n.sup - exact).abs() <= 0.02 * exact.max(1.0),
                    "t = {}: {} vs {exact}",
                    n.t,
                    n.sup
                );
            }
        }
    }

    #[test]
    fn identical_runs_have_zero_gap_and_perturbed_runs_reconverge() {
        let fam = MetricFamily::decaying_bump(3, 0.5, 0.0, 0.05, 0.02).unwrap();
        let g = grid(5, 24.0, 64);
        let config = SolveConfig::new(g.clone(), 2.5e-3);
        let cache = SemigroupCache::new(g.clone(), config.dt, config.parallelism);
        let initial = RadialField::zeros(g.clone(), 0.0);
        let source = MetricSource::new(fam).unwrap();
        let a = continue_to_blowup(&initial, 0.1, &source, &cache, &config).unwrap();
        let b = continue_to_blowup(&initial, 0.1, &source, &cache, &config).unwrap();
        let rep = uniqueness_gap(&a, &b, 1e-6).unwrap();
        assert_eq!(rep.final_e, 0.0);

        let mut config2 = config.clone();
        config2.first_guess_perturbation = Some(
            g.radii()
                .iter()
                .map(|&r| 1e-3 * (-(r - 3.0) * (r - 3.0)).exp())
                .collect(),
        );
        let c = continue_to_blowup(&initial, 0.1, &source, &cache, &config2).unwrap();
        let rep = uniqueness_gap(&a, &c, 1e-6).unwrap();
        assert!(rep.pass, "E = {}", rep.final_e);
        assert!(rep.final_e <= 1e-6);
    }

    #[test]
    fn sequential_and_parallel_runs_are_bit_identical() {
        let fam = MetricFamily::decaying_bump(3, 0.5, 0.0, 0.05, 0.02).unwrap();
        let g = grid(5, 24.0, 48);
        let mut config = SolveConfig::new(g.clone(), 5e-3);
        config.parallelism = Parallelism::Sequential;
        let cache = SemigroupCache::new(g.clone(), config.dt, Parallelism::Sequential);
        let initial = RadialField::zeros(g.clone(), 0.0);
        let source = MetricSource::new(fam).unwrap();
        let a = continue_to_blowup(&initial, 0.05, &source, &cache, &config).unwrap();

        let mut config2 = config.clone();
        config2.parallelism = Parallelism::default();
        let cache2 = SemigroupCache::new(g.clone(), config2.dt, config2.parallelism);
        let b = continue_to_blowup(&initial, 0.05, &source, &cache2, &config2).unwrap();
        for (fa, fb) in a.fields.iter().zip(&b.fields) {
            assert_eq!(fa.values(), fb.values());
        }
    }
}
