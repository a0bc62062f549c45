//! Temporary diagnostics (deleted before release).

use hmf_core::exec::Parallelism;
use hmf_core::green::{
    build_ball_kernel, build_ball_kernel_mollified, build_exterior_kernel, BuildOptions,
    FluxSide, Mollifier,
};
use hmf_core::grid::RadialGrid;

fn opts(dt: f64, sources: Option<Vec<usize>>) -> BuildOptions {
    BuildOptions {
        dt,
        sources,
        flux_stride: 1,
        parallelism: Parallelism::default(),
        certify_truncation: false,
    }
}

#[test]
fn probe_conservation_identity() {
    // mass(tau) + omega R^{m-1} ∫ flux dtau must be 1.
    let grid = RadialGrid::uniform(5, 0.0, 1.0, 201).unwrap();
    let src = grid.find_node(0.5, 1e-9).unwrap();
    let table = build_ball_kernel(
        1.0,
        5,
        &grid,
        &[0.01, 0.05, 0.1],
        &opts(5e-4, Some(vec![src])),
    )
    .unwrap();
    let masses = &table.conservation_masses()[0];
    let flux = table.flux(FluxSide::Outer, 0).unwrap();
    let ft = table.flux_times();
    let omega = grid.unit_sphere_area();
    for (k, &tau) in table.times().iter().enumerate() {
        let upto = ft.partition_point(|&x| x <= tau + 1e-12);
        let mut taus = vec![0.0];
        taus.extend_from_slice(&ft[..upto]);
        let w = hmf_core::quad::trapezoid_weights(&taus);
        let mut acc = 0.0;
        for (j, &t) in taus.iter().enumerate() {
            let f = if t == 0.0 { 0.0 } else { flux[j - 1] };
            acc += w[j] * f;
        }
        let total = masses[k] + omega * acc;
        println!("tau = {tau}: mass {:.8}, flux-int {:.8}, total-1 = {:+.3e}",
            masses[k], omega * acc, total - 1.0);
    }
}

#[test]
fn probe_reconstruct_constant_pattern() {
    use hmf_core::singularity::{reconstruct, PuncturedSample};
    let grid = RadialGrid::uniform(5, 0.0, 1.0, 401).unwrap();
    let taus: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
    let table = build_ball_kernel(1.0, 5, &grid, &taus, &opts(2.5e-4, None)).unwrap();
    let radii = grid.radii()[8..].to_vec();
    let times: Vec<f64> = (0..=10).map(|k| 0.05 + 0.01 * k as f64).collect();
    let sample = PuncturedSample::from_fn(5, 1.0, radii, times, "const", |_, _| 1.0).unwrap();
    let rec = reconstruct(&sample, &table).unwrap();
    for (kt, &t) in rec.times.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut arg = 0.0;
        for (i, &r) in rec.grid.radii().iter().enumerate() {
            if !(0.25..=0.75).contains(&r) {
                continue;
            }
            let d = (rec.value(kt, i) - 1.0).abs();
            if d > worst {
                worst = d;
                arg = r;
            }
        }
        println!("t = {t:.2}: worst {worst:.3e} at r = {arg:.3}");
    }
}

#[test]
fn probe_mollifier_gap_by_source() {
    let grid = RadialGrid::uniform(5, 0.0, 1.0, 161).unwrap();
    let sources: Vec<usize> = vec![16, 32, 48, 64, 80, 96, 112, 128, 144];
    let times = [0.05, 0.1, 0.3];
    let moll = Mollifier::new(1.0 / 64.0).unwrap();
    let t_m =
        build_ball_kernel_mollified(1.0, 5, &grid, &times, &moll, &opts(2e-4, Some(sources.clone())))
            .unwrap();
    let t_e = build_ball_kernel(1.0, 5, &grid, &times, &opts(2e-4, Some(sources))).unwrap();
    for (jc, &rj) in t_m.source_radii().iter().enumerate() {
        let mut gap = 0.0f64;
        for k in 0..times.len() {
            for i in 0..t_m.n_fields() {
                gap = gap.max((t_m.g_value(i, jc, k) - t_e.g_value(i, jc, k)).abs());
            }
        }
        println!("source r = {rj:.3}: gap {gap:.3e}");
    }
}

#[test]
fn probe_symmetry_by_resolution() {
    for &(n, dt) in &[(161usize, 5e-4), (321, 2e-4), (513, 1e-4)] {
        let grid = RadialGrid::uniform(5, 0.0, 1.0, n).unwrap();
        let step = (n - 1) / 8;
        let sources: Vec<usize> = (1..8).map(|k| k * step).collect();
        let table =
            build_ball_kernel(1.0, 5, &grid, &[0.025, 0.05, 0.1], &opts(dt, Some(sources)))
                .unwrap();
        // Defect per source pair.
        let radii = table.source_radii();
        let mut worst_overall = 0.0f64;
        let mut worst_inner = 0.0f64;
        for k in 0..table.times().len() {
            for (jc, &rj) in table.source_indices().iter().enumerate() {
                for (ic, &ri) in table.source_indices().iter().enumerate().skip(jc + 1) {
                    let d = (table.value(ri, jc, k) - table.value(rj, ic, k)).abs();
                    worst_overall = worst_overall.max(d);
                    if radii[jc] <= 0.8 && radii[ic] <= 0.8 {
                        worst_inner = worst_inner.max(d);
                    }
                }
            }
        }
        println!("n = {n}: overall {worst_overall:.3e}, sources <= 0.8R {worst_inner:.3e}");
    }
}

#[test]
fn probe_exterior_flux_minimum() {
    let grid = RadialGrid::uniform(3, 1.0, 12.0, 221).unwrap();
    let idx = |r: f64| grid.find_node(r, 1e-9).unwrap();
    let src: Vec<usize> = [1.5, 2.0, 2.5, 3.0].iter().map(|&r| idx(r)).collect();
    let ext =
        build_exterior_kernel(12.0, 3, &grid, &[0.05, 0.1], &opts(5e-4, Some(src))).unwrap();
    for jc in 0..ext.source_indices().len() {
        let flux = ext.flux(FluxSide::Inner, jc).unwrap();
        let ft = ext.flux_times();
        let mut min = f64::INFINITY;
        let mut argmin = 0.0;
        for (k, &f) in flux.iter().enumerate() {
            if f < min {
                min = f;
                argmin = ft[k];
            }
        }
        println!(
            "source r = {:.2}: min flux {min:.3e} at tau = {argmin:.4}",
            ext.source_radii()[jc]
        );
    }
}
