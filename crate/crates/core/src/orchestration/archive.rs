//! On-disk chain archive: a self-describing binary container with a JSON
//! header followed by little-endian f64 blocks, one per retained draw
//! (log-likelihood first, then the flattened state).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelState};

use super::RunConfig;

const MAGIC: &[u8; 8] = b"FMMARCH1";

/// Acceptance bookkeeping for one MH block across a run.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct AcceptanceCount {
    pub accepted: u64,
    pub attempts: u64,
}

impl AcceptanceCount {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

/// Archive metadata. Wall-clock time is carried in memory but not written to
/// the archive file, so archive bytes are reproducible under a fixed seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub config: RunConfig,
    pub config_hash: String,
    pub chain_id: u64,
    pub acceptance: BTreeMap<String, AcceptanceCount>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Ordered, thinned sequence of posterior draws plus per-draw log-likelihood.
#[derive(Clone, Debug)]
pub struct ChainArchive {
    pub dims: ModelDims,
    pub draws: Vec<ModelState>,
    pub loglik: Vec<f64>,
    /// Absolute 1-based iteration at which each draw was taken.
    pub iterations: Vec<u64>,
    pub meta: ArchiveMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    n_draws: usize,
    iterations: Vec<u64>,
    meta: ArchiveMeta,
}

/// Number of f64 values in one flattened state.
pub fn state_len(dims: ModelDims) -> usize {
    let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
    k * p + 2 * k * p * m + n * m + n * k + k + 2 + m * k + 3 * k
}

pub fn state_to_floats(state: &ModelState, out: &mut Vec<f64>) {
    let dims = state.dims();
    let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
    for kk in 0..k {
        for pp in 0..p {
            out.push(state.nu[(kk, pp)]);
        }
    }
    for kk in 0..k {
        for pp in 0..p {
            for mm in 0..m {
                out.push(state.phi[kk][(pp, mm)]);
            }
        }
    }
    for i in 0..n {
        for mm in 0..m {
            out.push(state.chi[(i, mm)]);
        }
    }
    for i in 0..n {
        for kk in 0..k {
            out.push(state.z[(i, kk)]);
        }
    }
    out.extend(state.pi.iter());
    out.push(state.alpha3);
    out.push(state.sigma2);
    for mm in 0..m {
        for kk in 0..k {
            out.push(state.delta[(mm, kk)]);
        }
    }
    for kk in 0..k {
        for pp in 0..p {
            for mm in 0..m {
                out.push(state.gamma[kk][(pp, mm)]);
            }
        }
    }
    out.extend(state.a1.iter());
    out.extend(state.a2.iter());
    out.extend(state.tau.iter());
}

pub fn state_from_floats(dims: ModelDims, floats: &[f64]) -> Result<ModelState> {
    if floats.len() != state_len(dims) {
        return Err(Error::ArchiveFormat(format!(
            "draw block has {} floats, expected {}",
            floats.len(),
            state_len(dims)
        )));
    }
    let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
    let mut it = floats.iter().copied();
    let mut next = || it.next().expect("length checked");
    let mut state = ModelState::zeros(dims);
    for kk in 0..k {
        for pp in 0..p {
            state.nu[(kk, pp)] = next();
        }
    }
    for kk in 0..k {
        for pp in 0..p {
            for mm in 0..m {
                state.phi[kk][(pp, mm)] = next();
            }
        }
    }
    for i in 0..n {
        for mm in 0..m {
            state.chi[(i, mm)] = next();
        }
    }
    for i in 0..n {
        for kk in 0..k {
            state.z[(i, kk)] = next();
        }
    }
    state.pi = DVector::from_fn(k, |_, _| next());
    state.alpha3 = next();
    state.sigma2 = next();
    state.delta = DMatrix::from_fn(m, k, |_, _| 0.0);
    for mm in 0..m {
        for kk in 0..k {
            state.delta[(mm, kk)] = next();
        }
    }
    for kk in 0..k {
        for pp in 0..p {
            for mm in 0..m {
                state.gamma[kk][(pp, mm)] = next();
            }
        }
    }
    state.a1 = DVector::from_fn(k, |_, _| next());
    state.a2 = DVector::from_fn(k, |_, _| next());
    state.tau = DVector::from_fn(k, |_, _| next());
    Ok(state)
}

impl ChainArchive {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            dims: self.dims,
            n_draws: self.draws.len(),
            iterations: self.iterations.clone(),
            meta: self.meta.clone(),
        };
        let header_json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())?;
        w.write_all(&header_json)?;
        let mut floats = Vec::with_capacity(1 + state_len(self.dims));
        for (draw, &ll) in self.draws.iter().zip(&self.loglik) {
            floats.clear();
            floats.push(ll);
            state_to_floats(draw, &mut floats);
            for v in &floats {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ArchiveFormat("bad magic bytes".into()));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)?;
        let block = 1 + state_len(header.dims);
        let mut draws = Vec::with_capacity(header.n_draws);
        let mut loglik = Vec::with_capacity(header.n_draws);
        let mut buf = vec![0u8; block * 8];
        for _ in 0..header.n_draws {
            r.read_exact(&mut buf)?;
            let floats: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            loglik.push(floats[0]);
            draws.push(state_from_floats(header.dims, &floats[1..])?);
        }
        Ok(ChainArchive {
            dims: header.dims,
            draws,
            loglik,
            iterations: header.iterations,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Export the log-likelihood trace as `iter,loglik` CSV.
    pub fn write_loglik_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,loglik")?;
        for (&iter, &ll) in self.iterations.iter().zip(&self.loglik) {
            writeln!(w, "{iter},{}", crate::model::fmt_f64(ll))?;
        }
        Ok(())
    }
}

/// FNV-1a hash of the canonical JSON form of the run configuration.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).unwrap_or_default();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}
