//! Binary weight checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic       8 bytes  "CTXRANK\0"
//! version     u32      FORMAT_VERSION
//! header_len  u32
//! header      header_len bytes of UTF-8 JSON
//!             {"format_version", "encoder", "tokenizer", ...extra keys}
//! count       u32      number of tensors
//! per tensor: name_len u32, name bytes, rows u32, cols u32,
//!             rows*cols f32 little-endian, row-major
//! ```
//!
//! Tensors appear in parameter registration order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mat, ParamSet};

pub const MAGIC: &[u8; 8] = b"CTXRANK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub encoder: super::EncoderConfig,
    pub tokenizer: super::TokenizerConfig,
    /// Model-specific metadata (variant tag, run hashes, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut out: W, header: &CheckpointHeader, params: &ParamSet) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, m) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(m.rows as u32).to_le_bytes())?;
        out.write_all(&(m.cols as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(m.len() * 4);
        for v in &m.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<(String, Mat)>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = read_u32(&mut r)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbuf)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf)?;
        let name = String::from_utf8(nbuf).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        tensors.push((name, Mat::from_vec(rows, cols, data)));
    }
    Ok((header, tensors))
}

/// Overwrites `params` with checkpoint tensors; names, order and shapes must match.
pub fn load_into(params: &mut ParamSet, tensors: Vec<(String, Mat)>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            params.len(),
            tensors.len()
        )));
    }
    for (id, (name, m)) in params.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
        if params.name(id) != name {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` where `{}` was expected",
                params.name(id)
            )));
        }
        if params.get(id).shape() != m.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
        }
        *params.get_mut(id) = m;
    }
    Ok(())
}
