//! Kernel-table persistence.
//!
//! File layout: a text header (format tag, scheme version, domain spec,
//! mollifier, dt, grid radii, snapshot times, flux times, source indices,
//! input hash) followed by a single binary block of little-endian 64-bit
//! floats holding, in order, the kernel values, the free-kernel values, the
//! inner fluxes, and the outer fluxes. Cache keys hash the build inputs
//! together with the scheme version, so a scheme bump invalidates every
//! entry.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::green::{BuildOptions, DomainSpec, KernelTable, Mollifier};
use crate::grid::RadialGrid;

const FORMAT_TAG: &str = "hmf-kernel-table 1";

/// Hash of the inputs that determine a table's contents.
#[allow(clippy::too_many_arguments)]
pub fn table_key(
    domain: &DomainSpec,
    grid: &RadialGrid,
    times: &[f64],
    mollifier_delta: Option<f64>,
    dt: f64,
    flux_stride: usize,
    sources: Option<&[usize]>,
    scheme_version: u32,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(domain.tag().as_bytes());
    hasher.update((domain.dim as u64).to_le_bytes());
    for &r in grid.radii() {
        hasher.update(r.to_le_bytes());
    }
    for &t in times {
        hasher.update(t.to_le_bytes());
    }
    match mollifier_delta {
        Some(d) => {
            hasher.update([1u8]);
            hasher.update(d.to_le_bytes());
        }
        None => hasher.update([0u8]),
    }
    hasher.update(dt.to_le_bytes());
    hasher.update((flux_stride as u64).to_le_bytes());
    match sources {
        Some(s) => {
            hasher.update([1u8]);
            for &j in s {
                hasher.update((j as u64).to_le_bytes());
            }
        }
        None => hasher.update([0u8]),
    }
    hasher.update(scheme_version.to_le_bytes());
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sha-256 of a file's contents, for run manifests.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut file = fs::File::open(path)?;
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn write_floats(w: &mut impl Write, label: &str, vals: &[f64]) -> Result<()> {
    write!(w, "{label} {}", vals.len())?;
    for v in vals {
        write!(w, " {v:.16e}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Writes a table to `path` in the documented header + binary layout.
pub fn write_table(table: &KernelTable, key: &str, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{FORMAT_TAG}")?;
    writeln!(w, "scheme {}", table.scheme_version)?;
    writeln!(w, "domain {}", table.domain.tag())?;
    writeln!(w, "dim {}", table.domain.dim)?;
    match table.mollifier_delta {
        Some(d) => writeln!(w, "mollifier {d:.16e}")?,
        None => writeln!(w, "mollifier none")?,
    }
    writeln!(w, "dt {:.16e}", table.dt)?;
    write_floats(&mut w, "grid", table.grid().radii())?;
    write_floats(&mut w, "times", table.times())?;
    write_floats(&mut w, "fluxtimes", table.flux_times())?;
    write!(w, "sources {}", table.source_indices().len())?;
    for &j in table.source_indices() {
        write!(w, " {j}")?;
    }
    writeln!(w)?;
    writeln!(w, "hash {key}")?;
    let (values, k_values, flux_inner, flux_outer) = table.raw_values();
    writeln!(
        w,
        "binary {} {} {} {}",
        values.len(),
        k_values.len(),
        flux_inner.len(),
        flux_outer.len()
    )?;
    for block in [values, k_values, flux_inner, flux_outer] {
        for v in block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_floats(line: &str, label: &str) -> Result<Vec<f64>> {
    let mut it = line.split_whitespace();
    let tag = it.next().unwrap_or("");
    if tag != label {
        return Err(Error::CacheFormat(format!("expected '{label}' line, got '{tag}'")));
    }
    let count: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CacheFormat(format!("bad count on '{label}' line")))?;
    let vals: Vec<f64> = it
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::CacheFormat(format!("bad float on '{label}' line: {e}")))?;
    if vals.len() != count {
        return Err(Error::CacheFormat(format!(
            "'{label}' count {count} does not match {} values",
            vals.len()
        )));
    }
    Ok(vals)
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::CacheFormat("unexpected end of header".into()));
    }
    Ok(line.trim_end().to_string())
}

/// Reads a table previously written by [`write_table`], verifying the
/// stored key against `expected_key` when supplied.
pub fn read_table(path: &Path, expected_key: Option<&str>) -> Result<KernelTable> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);
    if read_line(&mut r)? != FORMAT_TAG {
        return Err(Error::CacheFormat("unknown format tag".into()));
    }
    let scheme_line = read_line(&mut r)?;
    let scheme_version: u32 = scheme_line
        .strip_prefix("scheme ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CacheFormat("bad scheme line".into()))?;
    let domain_line = read_line(&mut r)?;
    let domain_body = domain_line
        .strip_prefix("domain ")
        .ok_or_else(|| Error::CacheFormat("bad domain line".into()))?
        .to_string();
    let dim_line = read_line(&mut r)?;
    let dim: usize = dim_line
        .strip_prefix("dim ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CacheFormat("bad dim line".into()))?;
    let domain = parse_domain(&domain_body, dim)?;
    let moll_line = read_line(&mut r)?;
    let mollifier_delta = match moll_line
        .strip_prefix("mollifier ")
        .ok_or_else(|| Error::CacheFormat("bad mollifier line".into()))?
    {
        "none" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|_| Error::CacheFormat("bad mollifier delta".into()))?,
        ),
    };
    let dt_line = read_line(&mut r)?;
    let dt: f64 = dt_line
        .strip_prefix("dt ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CacheFormat("bad dt line".into()))?;
    let radii = parse_floats(&read_line(&mut r)?, "grid")?;
    let times = parse_floats(&read_line(&mut r)?, "times")?;
    let flux_times = parse_floats(&read_line(&mut r)?, "fluxtimes")?;
    let src_line = read_line(&mut r)?;
    let mut it = src_line.split_whitespace();
    if it.next() != Some("sources") {
        return Err(Error::CacheFormat("expected sources line".into()));
    }
    let n_src: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CacheFormat("bad sources count".into()))?;
    let source_indices: Vec<usize> = it
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CacheFormat("bad source index".into()))?;
    if source_indices.len() != n_src {
        return Err(Error::CacheFormat("sources count mismatch".into()));
    }
    let hash_line = read_line(&mut r)?;
    let key = hash_line
        .strip_prefix("hash ")
        .ok_or_else(|| Error::CacheFormat("bad hash line".into()))?;
    if let Some(expected) = expected_key {
        if key != expected {
            return Err(Error::CacheFormat(format!(
                "cache key mismatch: file has {key}, expected {expected}"
            )));
        }
    }
    let bin_line = read_line(&mut r)?;
    let counts: Vec<usize> = bin_line
        .strip_prefix("binary ")
        .ok_or_else(|| Error::CacheFormat("bad binary line".into()))?
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CacheFormat("bad binary counts".into()))?;
    if counts.len() != 4 {
        return Err(Error::CacheFormat("binary line must carry four counts".into()));
    }
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(4);
    for &count in &counts {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let vals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.push(vals);
    }
    let flux_outer = blocks.pop().unwrap();
    let flux_inner = blocks.pop().unwrap();
    let k_values = blocks.pop().unwrap();
    let values = blocks.pop().unwrap();
    let grid = Arc::new(RadialGrid::new(radii, dim)?);
    let n = grid.len();
    if values.len() != times.len() * n_src * n || k_values.len() != values.len() {
        return Err(Error::CacheFormat("value block size mismatch".into()));
    }
    Ok(KernelTable::from_raw_parts(
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
    ))
}

fn parse_domain(body: &str, dim: usize) -> Result<DomainSpec> {
    let parts: Vec<&str> = body.split_whitespace().collect();
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::CacheFormat(format!("bad domain number '{s}'")))
    };
    match parts.as_slice() {
        ["ball", r] => DomainSpec::ball(parse(r)?, dim),
        ["annulus", a, b] => DomainSpec::annulus(parse(a)?, parse(b)?, dim),
        ["exterior", r] => DomainSpec::exterior(parse(r)?, dim),
        _ => Err(Error::CacheFormat(format!("unknown domain '{body}'"))),
    }
}

/// Directory-backed cache of kernel tables keyed by build inputs.
pub struct KernelCache {
    dir: PathBuf,
}

/// Where a table came from and where it lives on disk.
#[derive(Debug, Clone)]
pub struct CacheOutcome {
    pub path: PathBuf,
    pub key: String,
    pub was_hit: bool,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(KernelCache { dir })
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.hmk", &key[..24]))
    }

    /// Loads the table for these inputs from disk, or builds it with
    /// `builder` and persists the result. Corrupt or mismatched entries
    /// are discarded and rebuilt.
    pub fn get_or_build(
        &self,
        domain: &DomainSpec,
        grid: &RadialGrid,
        times: &[f64],
        mollifier: Option<&Mollifier>,
        opts: &BuildOptions,
        builder: impl FnOnce() -> Result<KernelTable>,
    ) -> Result<(KernelTable, CacheOutcome)> {
        let key = table_key(
            domain,
            grid,
            times,
            mollifier.map(|m| m.delta()),
            opts.dt,
            opts.flux_stride,
            opts.sources.as_deref(),
            crate::green::SCHEME_VERSION,
        );
        let path = self.path_for(&key);
        if path.exists() {
            match read_table(&path, Some(&key)) {
                Ok(table) => {
                    return Ok((table, CacheOutcome { path, key, was_hit: true }));
                }
                Err(_) => {
                    let _ = fs::remove_file(&path);
                }
            }
        }
        let table = builder()?;
        write_table(&table, &key, &path)?;
        Ok((table, CacheOutcome { path, key, was_hit: false }))
    }
}

/// Plain-text export of a table's kernel values (r, r_source, tau, value)
/// with round-trippable 17-significant-digit floats.
pub fn export_table_csv(table: &KernelTable, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "r,r_source,tau,value,free_kernel")?;
    let radii = table.grid().radii();
    let src = table.source_radii();
    for (k, &t) in table.times().iter().enumerate() {
        for (jc, &rj) in src.iter().enumerate() {
            for (i, &r) in radii.iter().enumerate() {
                writeln!(
                    w,
                    "{r:.16e},{rj:.16e},{t:.16e},{:.16e},{:.16e}",
                    table.value(i, jc, k),
                    table.k_value(i, jc, k)
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Parallelism;
    use crate::green::build_ball_kernel;

    fn small_opts() -> BuildOptions {
        BuildOptions {
            dt: 1e-3,
            sources: Some(vec![8, 16]),
            flux_stride: 2,
            parallelism: Parallelism::Sequential,
            certify_truncation: false,
        }
    }

    fn small_table() -> KernelTable {
        let grid = RadialGrid::uniform(3, 0.0, 1.0, 33).unwrap();
        build_ball_kernel(1.0, 3, &grid, &[0.02, 0.05], &small_opts()).unwrap()
    }

    #[test]
    fn roundtrip_preserves_every_bit() {
        let table = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.hmk");
        write_table(&table, "deadbeef", &path).unwrap();
        let back = read_table(&path, Some("deadbeef")).unwrap();
        assert_eq!(table.times(), back.times());
        assert_eq!(table.source_indices(), back.source_indices());
        assert_eq!(table.grid().radii(), back.grid().radii());
        let (v1, k1, fi1, fo1) = table.raw_values();
        let (v2, k2, fi2, fo2) = back.raw_values();
        assert_eq!(v1, v2);
        assert_eq!(k1, k2);
        assert_eq!(fi1, fi2);
        assert_eq!(fo1, fo2);
        assert!(read_table(&path, Some("badkey")).is_err());
    }

    #[test]
    fn cache_hits_after_first_build() {
        let dir = tempfile::tempdir().unwrap();
        let cache = KernelCache::new(dir.path()).unwrap();
        let grid = RadialGrid::uniform(3, 0.0, 1.0, 33).unwrap();
        let domain = DomainSpec::ball(1.0, 3).unwrap();
        let opts = small_opts();
        let times = [0.02, 0.05];
        let (_, outcome1) = cache
            .get_or_build(&domain, &grid, &times, None, &opts, || {
                build_ball_kernel(1.0, 3, &grid, &times, &opts)
            })
            .unwrap();
        assert!(!outcome1.was_hit);
        let (t2, outcome2) = cache
            .get_or_build(&domain, &grid, &times, None, &opts, || {
                panic!("must not rebuild on a cache hit")
            })
            .unwrap();
        assert!(outcome2.was_hit);
        assert_eq!(outcome1.key, outcome2.key);
        assert_eq!(t2.times(), &times);
        // Different dt and different scheme version change the key.
        let k1 = table_key(&domain, &grid, &times, None, opts.dt, 2, opts.sources.as_deref(), 1);
        let k2 = table_key(&domain, &grid, &times, None, 5e-4, 2, opts.sources.as_deref(), 1);
        let k3 = table_key(&domain, &grid, &times, None, opts.dt, 2, opts.sources.as_deref(), 2);
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let table = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        export_table_csv(&table, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "r,r_source,tau,value,free_kernel");
        assert_eq!(text.lines().count(), 1 + 2 * 2 * 33);
    }
}
