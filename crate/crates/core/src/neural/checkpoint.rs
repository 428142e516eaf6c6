//! Binary checkpoint: magic `SWRCK1`, a little-endian `u32` byte length and
//! that many bytes of JSON `{"arch": .., "meta": ..}`, then `u64` codebook
//! rows, `u64` style dim, `u64` policy parameter count, the policy
//! parameters in [`Layout`](super::Layout) order and the codebook table
//! (row-major), all as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, Codebook, MlpPolicy};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"SWRCK1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub policy: MlpPolicy,
    pub codebook: Codebook,
    /// Free-form provenance (algorithm, steps, seed, ...).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    meta: serde_json::Value,
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        arch: ck.policy.arch().clone(),
        meta: ck.meta.clone(),
    })?;
    let header_len = u32::try_from(header.len())
        .map_err(|_| Error::Format("checkpoint header too large".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    for n in [ck.codebook.rows(), ck.codebook.dim(), ck.policy.params().len()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for v in ck.policy.params().iter().chain(ck.codebook.table()) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let rows = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let n_params = read_u64(&mut r)? as usize;
    if dim != header.arch.style_dim {
        return Err(Error::DimensionMismatch {
            expected: header.arch.style_dim,
            got: dim,
        });
    }
    let params = read_f64s(&mut r, n_params)?;
    let table = read_f64s(&mut r, rows * dim)?;
    Ok(Checkpoint {
        policy: MlpPolicy::from_params(header.arch, params)?,
        codebook: Codebook::from_table(rows, dim, table)?,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn sample() -> Checkpoint {
        let arch = ArchConfig {
            style_dim: 4,
            hidden_dim: 6,
            num_hidden: 3,
            residual_every: 2,
            input_offset: [5.5, 5.5],
            input_scale: [2.0 / 11.0, 2.0 / 11.0],
        };
        let mut rng = RngStream::new(0, "ck");
        Checkpoint {
            policy: MlpPolicy::init(arch, &mut rng).unwrap(),
            codebook: Codebook::init(7, 4, &mut rng),
            meta: serde_json::json!({"algorithm": "wzbc", "steps": 3}),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert_eq!(&buf[..6], b"SWRCK1");
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_or_foreign_files_fail() {
        let ck = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ck");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }
}
