//! On-disk cache of forcing-independent cell solutions, keyed by a hash of every input.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::cell::{CellBase, CellMesh, CellParams, ScalarCellSolution, VectorCellSolution};
use crate::geometry::{BoundaryLift, RoughnessProfile};

const MAGIC: &[u8; 8] = b"RFCELL01";

#[derive(Debug, Clone)]
pub struct CellCache {
    dir: PathBuf,
}

impl CellCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CellCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(profile: &RoughnessProfile, y1: f64, mesh: CellMesh, params: &CellParams, lift: &BoundaryLift) -> String {
        let text = format!(
            "{}|y1={:016x}|mesh={}x{}|nu={:016x}|nur={:016x}|delta={:016x}|extrap={}|solver={:?}|cu={:016x},{:016x}|cw={:016x},{:016x}",
            profile.fingerprint(),
            y1.to_bits(),
            mesh.n_eta1,
            mesh.n_y2,
            params.fluid.nu.to_bits(),
            params.fluid.nu_r.to_bits(),
            params.penalty.delta_c.to_bits(),
            params.penalty.extrapolate,
            params.solver,
            lift.cutoff_u.support.to_bits(),
            lift.cutoff_u.amplitude.to_bits(),
            lift.cutoff_w.support.to_bits(),
            lift.cutoff_w.amplitude.to_bits(),
        );
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.cell"))
    }

    /// Closure-defined profiles are never cached: their name does not pin the function.
    fn cacheable(profile: &RoughnessProfile) -> bool {
        profile.closure_name().is_none()
    }

    pub fn load(
        &self,
        profile: &RoughnessProfile,
        y1: f64,
        mesh: CellMesh,
        params: &CellParams,
        lift: &BoundaryLift,
    ) -> Option<CellBase> {
        if !Self::cacheable(profile) {
            return None;
        }
        let bytes = fs::read(self.path(&Self::key(profile, y1, mesh, params, lift))).ok()?;
        decode(&bytes, y1, mesh).ok()
    }

    pub fn store(
        &self,
        profile: &RoughnessProfile,
        y1: f64,
        mesh: CellMesh,
        params: &CellParams,
        lift: &BoundaryLift,
        base: &CellBase,
    ) -> io::Result<()> {
        if !Self::cacheable(profile) {
            return Ok(());
        }
        let key = Self::key(profile, y1, mesh, params, lift);
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(base))?;
        f.sync_all()?;
        fs::rename(tmp, self.path(&key))
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_vector(out: &mut Vec<u8>, w: &VectorCellSolution) {
    put_f64s(out, &[w.delta_c, w.divergence_residual, w.residual, if w.extrapolated { 1.0 } else { 0.0 }]);
    put_f64s(out, &w.u1);
    put_f64s(out, &w.u2);
}

fn encode(base: &CellBase) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_vector(&mut out, &base.w1);
    put_vector(&mut out, &base.w2);
    put_f64s(&mut out, &[base.z1.residual]);
    put_f64s(&mut out, &base.z1.values);
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn f64s(&mut self) -> io::Result<Vec<f64>> {
        let mut len = [0u8; 8];
        self.0.read_exact(&mut len)?;
        let n = u64::from_le_bytes(len) as usize;
        if n > self.0.len() / 8 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated cache entry"));
        }
        let mut v = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.0.read_exact(&mut b)?;
            v.push(f64::from_le_bytes(b));
        }
        Ok(v)
    }
}

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

fn decode(bytes: &[u8], y1: f64, mesh: CellMesh) -> io::Result<CellBase> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let n = mesh.strip().n_nodes();
    let mut r = Reader(&bytes[8..]);
    let vector = |r: &mut Reader| -> io::Result<VectorCellSolution> {
        let meta = r.f64s()?;
        let (u1, u2) = (r.f64s()?, r.f64s()?);
        if meta.len() != 4 || u1.len() != n || u2.len() != n {
            return Err(bad("shape mismatch"));
        }
        Ok(VectorCellSolution {
            y1,
            mesh,
            u1,
            u2,
            delta_c: meta[0],
            extrapolated: meta[3] != 0.0,
            divergence_residual: meta[1],
            residual: meta[2],
        })
    };
    let w1 = vector(&mut r)?;
    let w2 = vector(&mut r)?;
    let meta = r.f64s()?;
    let values = r.f64s()?;
    if meta.len() != 1 || values.len() != n || !r.0.is_empty() {
        return Err(bad("shape mismatch"));
    }
    Ok(CellBase { w1, w2, z1: ScalarCellSolution { y1, mesh, values, residual: meta[0] } })
}
