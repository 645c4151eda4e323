//! On-disk ground-state cache: one record per (grid hash, p, σ, λ, n_max),
//! a binary amplitude payload with a version header, and a plain-text sidecar
//! for quick inspection. Writes are serialized through a lock file; reads are
//! lock-free.

use crate::fock::{FockBasis, FockVector};
use crate::spectral::GroundStateRecord;
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

const MAGIC: &[u8; 8] = b"NELSONGS";
const VERSION: u32 = 1;
const LOCK_NAME: &str = ".cache.lock";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    grid_hash: String,
    p: [f64; 3],
    sigma: f64,
    lambda: f64,
    n_max: usize,
    dim: usize,
    energy: f64,
    energy_undressed: f64,
    grad_e: [f64; 3],
    grad_e_hf: [f64; 3],
    residual: f64,
    outer_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GroundStateCache {
    dir: PathBuf,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct GcReport {
    pub examined: usize,
    pub evicted: usize,
    pub retained_pinned: Vec<String>,
    pub reclaimed_bytes: u64,
}

fn key_stem(grid_hash: &str, p: [f64; 3], sigma: f64, lambda: f64, n_max: usize) -> String {
    let mut h = Sha256::new();
    h.update(grid_hash.as_bytes());
    for c in p {
        h.update(c.to_bits().to_le_bytes());
    }
    h.update(sigma.to_bits().to_le_bytes());
    h.update(lambda.to_bits().to_le_bytes());
    h.update(n_max.to_le_bytes());
    let d = h.finalize();
    let hex: String = d.iter().take(12).map(|b| format!("{b:02x}")).collect();
    format!("{grid_hash}-{hex}")
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

impl GroundStateCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(GroundStateCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn acquire_lock(&self) -> Result<LockGuard> {
        let path = self.dir.join(LOCK_NAME);
        for _ in 0..2000 {
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(LockGuard { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    std::thread::sleep(std::time::Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::Cache(format!("could not acquire writer lock at {}", path.display())))
    }

    pub fn store(&self, rec: &GroundStateRecord) -> Result<PathBuf> {
        let _guard = self.acquire_lock()?;
        let stem = key_stem(&rec.grid_hash, rec.p, rec.sigma, rec.lambda, rec.n_max);
        let path = self.dir.join(format!("{stem}.gsr"));
        let header = Header {
            version: VERSION,
            grid_hash: rec.grid_hash.clone(),
            p: rec.p,
            sigma: rec.sigma,
            lambda: rec.lambda,
            n_max: rec.n_max,
            dim: rec.phi.basis.dim(),
            energy: rec.energy,
            energy_undressed: rec.energy_undressed,
            grad_e: rec.grad_e,
            grad_e_hf: rec.grad_e_hf,
            residual: rec.residual,
            outer_iterations: rec.outer_iterations,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Cache(format!("header encode: {e}")))?;
        let tmp = self.dir.join(format!("{stem}.gsr.tmp"));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(MAGIC)?;
            f.write_all(&(header_json.len() as u32).to_le_bytes())?;
            f.write_all(&header_json)?;
            for a in &rec.phi.amps {
                f.write_all(&a.re.to_le_bytes())?;
                f.write_all(&a.im.to_le_bytes())?;
            }
        }
        std::fs::rename(&tmp, &path)?;
        let meta = self.dir.join(format!("{stem}.meta.txt"));
        std::fs::write(
            &meta,
            format!(
                "grid_hash={}\np=({:e}, {:e}, {:e})\nsigma={:e}\nlambda={:e}\nn_max={}\nE={:.15e}\nE_undressed={:.15e}\ngradE=({:.9e}, {:.9e}, {:.9e})\nresidual={:.3e}\n",
                rec.grid_hash,
                rec.p[0],
                rec.p[1],
                rec.p[2],
                rec.sigma,
                rec.lambda,
                rec.n_max,
                rec.energy,
                rec.energy_undressed,
                rec.grad_e[0],
                rec.grad_e[1],
                rec.grad_e[2],
                rec.residual
            ),
        )?;
        Ok(path)
    }

    /// Load a record; returns Ok(None) when absent, and an error on version or
    /// shape mismatch rather than silently reusing incompatible data.
    pub fn load(
        &self,
        grid_hash: &str,
        p: [f64; 3],
        sigma: f64,
        lambda: f64,
        basis: &Arc<FockBasis>,
    ) -> Result<Option<GroundStateRecord>> {
        let stem = key_stem(grid_hash, p, sigma, lambda, basis.n_max);
        let path = self.dir.join(format!("{stem}.gsr"));
        if !path.exists() {
            return Ok(None);
        }
        let mut f = std::fs::File::open(&path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Cache(format!("{}: bad magic", path.display())));
        }
        let mut len = [0u8; 4];
        f.read_exact(&mut len)?;
        let mut hj = vec![0u8; u32::from_le_bytes(len) as usize];
        f.read_exact(&mut hj)?;
        let header: Header = serde_json::from_slice(&hj)
            .map_err(|e| Error::Cache(format!("{}: header decode: {e}", path.display())))?;
        if header.version != VERSION {
            return Err(Error::Cache(format!(
                "{}: cache version {} incompatible with {}",
                path.display(),
                header.version,
                VERSION
            )));
        }
        if header.dim != basis.dim() || header.n_max != basis.n_max {
            return Err(Error::Cache(format!(
                "{}: stored dim {} / n_max {} do not match basis ({} / {})",
                path.display(),
                header.dim,
                header.n_max,
                basis.dim(),
                basis.n_max
            )));
        }
        let mut phi = FockVector::zero(basis);
        let mut buf = [0u8; 16];
        for a in phi.amps.iter_mut() {
            f.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..16].try_into().unwrap());
            *a = C64::new(re, im);
        }
        Ok(Some(GroundStateRecord {
            p: header.p,
            sigma: header.sigma,
            lambda: header.lambda,
            grid_hash: header.grid_hash,
            n_max: header.n_max,
            energy: header.energy,
            energy_undressed: header.energy_undressed,
            grad_e: header.grad_e,
            grad_e_hf: header.grad_e_hf,
            hessian: None,
            phi,
            residual: header.residual,
            outer_iterations: header.outer_iterations,
        }))
    }

    /// Pin a record so the garbage collector keeps it even with a stale hash.
    pub fn pin(&self, path: &Path) -> Result<()> {
        let pin = path.with_extension("pin");
        std::fs::write(pin, b"pinned\n")?;
        Ok(())
    }

    /// Evict records whose grid hash is not in `known_hashes`, unless pinned.
    /// Refuses to run while a writer holds the lock.
    pub fn gc(&self, known_hashes: &[String]) -> Result<GcReport> {
        let lock_path = self.dir.join(LOCK_NAME);
        if lock_path.exists() {
            return Err(Error::Cache("cache is locked by a writer; retry later".into()));
        }
        let _guard = self.acquire_lock()?;
        let mut report = GcReport::default();
        let entries: Vec<_> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "gsr"))
            .collect();
        let mut sorted = entries;
        sorted.sort();
        for path in sorted {
            report.examined += 1;
            let stem = path.file_stem().unwrap().to_string_lossy().to_string();
            let hash = stem.split('-').next().unwrap_or("").to_string();
            if known_hashes.iter().any(|h| *h == hash) {
                continue;
            }
            if path.with_extension("pin").exists() {
                report.retained_pinned.push(stem);
                continue;
            }
            let bytes = path.metadata().map(|m| m.len()).unwrap_or(0);
            let meta = path.with_extension("meta.txt");
            let meta_bytes = meta.metadata().map(|m| m.len()).unwrap_or(0);
            std::fs::remove_file(&path)?;
            let _ = std::fs::remove_file(meta);
            report.evicted += 1;
            report.reclaimed_bytes += bytes + meta_bytes;
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::build_basis;
    use crate::modegrid::{build_grid, AngularSpec, RadialSpec};
    use crate::spectral::{self_consistent_dressed, SolveOptions};

    fn sample_record() -> (GroundStateRecord, Arc<FockBasis>) {
        let grid = Arc::new(
            build_grid(RadialSpec::log(2, 1e-2), AngularSpec::axes(), 0.05, 0.1).unwrap(),
        );
        let basis = build_basis(grid.mode_count(), 2).unwrap();
        let rec = self_consistent_dressed(
            [0.1, 0.0, 0.0],
            &grid,
            0.1,
            &basis,
            SolveOptions::default(),
        )
        .unwrap();
        (rec, basis)
    }

    #[test]
    fn roundtrip_and_sidecar() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = GroundStateCache::open(tmp.path()).unwrap();
        let (rec, basis) = sample_record();
        let path = cache.store(&rec).unwrap();
        assert!(path.exists());
        assert!(path.with_extension("meta.txt").exists());
        let loaded = cache
            .load(&rec.grid_hash, rec.p, rec.sigma, rec.lambda, &basis)
            .unwrap()
            .expect("record present");
        assert_eq!(loaded.energy, rec.energy);
        assert!(loaded.phi.sub(&rec.phi).norm() < 1e-15);
        // absent key
        assert!(cache
            .load(&rec.grid_hash, [0.9e-1, 0.0, 1e-3], rec.sigma, rec.lambda, &basis)
            .unwrap()
            .is_none());
    }

    #[test]
    fn gc_policy_table() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = GroundStateCache::open(tmp.path()).unwrap();
        // empty cache: zero evictions
        let rep = cache.gc(&[]).unwrap();
        assert_eq!(rep.examined, 0);
        assert_eq!(rep.evicted, 0);

        let (rec, _) = sample_record();
        let path = cache.store(&rec).unwrap();
        // known hash: retained
        let rep = cache.gc(&[rec.grid_hash.clone()]).unwrap();
        assert_eq!(rep.evicted, 0);
        // stale hash: evicted
        let rep = cache.gc(&["deadbeef".into()]).unwrap();
        assert_eq!(rep.evicted, 1);
        assert!(!path.exists());

        // pinned record with stale hash: retained and flagged
        let path = cache.store(&rec).unwrap();
        cache.pin(&path).unwrap();
        let rep = cache.gc(&["deadbeef".into()]).unwrap();
        assert_eq!(rep.evicted, 0);
        assert_eq!(rep.retained_pinned.len(), 1);
        assert!(path.exists());
    }

    #[test]
    fn gc_refuses_while_locked() {
        let tmp = tempfile::tempdir().unwrap();
        let cache = GroundStateCache::open(tmp.path()).unwrap();
        std::fs::write(tmp.path().join(LOCK_NAME), b"123\n").unwrap();
        assert!(cache.gc(&[]).is_err());
    }
}
