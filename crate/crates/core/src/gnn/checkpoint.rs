//! Binary checkpoint container.
//!
//! Layout: magic `BFCK`, `u32` version, `u64` header length, JSON header
//! (architecture, metadata, tensor index), little-endian `f64` payload in
//! index order followed by normalization statistics, and a trailing CRC-64
//! over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{checksum, write_atomic};
use crate::error::{BeamError, Result};
use crate::scalar::Real;

use super::arch::ArchSpec;
use super::params::{Block, BnStats, GnnParams, TrainingMeta};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
    bn_widths: Vec<usize>,
}

pub fn encode_params<T: Real>(p: &GnnParams<T>) -> Result<Vec<u8>> {
    p.validate()?;
    let header = Header {
        arch: p.arch.clone(),
        meta: p.meta.clone(),
        tensors: p
            .blocks
            .iter()
            .map(|b| TensorEntry {
                name: b.name.clone(),
                rows: b.rows,
                cols: b.cols,
            })
            .collect(),
        bn_widths: p.bn.iter().map(|s| s.mean_re.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * p.n_params() + 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |v: &[T]| {
        for x in v {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    };
    for b in &p.blocks {
        put(&b.data);
    }
    for s in &p.bn {
        put(&s.mean_re);
        put(&s.var_re);
        put(&s.mean_im);
        put(&s.var_im);
    }
    let crc = checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_params<T: Real>(bytes: &[u8]) -> Result<GnnParams<T>> {
    let bad = |m: &str| BeamError::Checkpoint(m.to_string());
    if bytes.len() < 24 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(BeamError::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let body = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body..].try_into().expect("8 bytes"));
    if checksum(&bytes[..body]) != stored {
        return Err(bad("checksum mismatch (truncated or corrupted file)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= body).ok_or_else(|| bad("header overruns file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..hend])?;
    let mut pos = hend;
    let mut take = |n: usize| -> Result<Vec<T>> {
        let end = pos
            .checked_add(n * 8)
            .filter(|&e| e <= body)
            .ok_or_else(|| bad("payload shorter than its index"))?;
        let v = bytes[pos..end]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        pos = end;
        Ok(v)
    };
    let mut blocks = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        blocks.push(Block {
            name: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
            data: take(t.rows * t.cols)?,
        });
    }
    let mut bn = Vec::with_capacity(header.bn_widths.len());
    for &w in &header.bn_widths {
        bn.push(BnStats {
            mean_re: take(w)?,
            var_re: take(w)?,
            mean_im: take(w)?,
            var_im: take(w)?,
        });
    }
    if pos != body {
        return Err(bad("trailing bytes after payload"));
    }
    let p = GnnParams {
        arch: header.arch,
        blocks,
        bn,
        meta: header.meta,
    };
    p.validate()?;
    Ok(p)
}

pub fn save_params<T: Real>(p: &GnnParams<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_params(p)?)
}

pub fn load_params<T: Real>(path: &Path) -> Result<GnnParams<T>> {
    decode_params(&std::fs::read(path)?)
}

/// Loads and rejects checkpoints whose architecture differs from `arch`.
pub fn load_params_for<T: Real>(path: &Path, arch: &ArchSpec) -> Result<GnnParams<T>> {
    let p = load_params(path)?;
    if &p.arch != arch {
        return Err(BeamError::Checkpoint("checkpoint architecture does not match".into()));
    }
    Ok(p)
}
