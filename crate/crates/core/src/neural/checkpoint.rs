//! Flat binary checkpoints.
//!
//! Layout: the 8-byte magic `FGLCKPT1`, a little-endian `u32` tensor count,
//! then for each tensor its name (`u32` length + UTF-8 bytes), rank (`u32`)
//! and dims (`u64` each), followed by every tensor's values as little-endian
//! `f64` in table order. The architecture is stored next to the checkpoint in
//! a `.toml` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::rnn::{ForecastModel, ModelConfig, Parameters};
use crate::error::{FglError, Result};

pub const MAGIC: &[u8; 8] = b"FGLCKPT1";

pub fn to_bytes(params: &Parameters) -> Vec<u8> {
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(16 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for t in &tensors {
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| FglError::config("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint into parameters laid out for `config`.
pub fn from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Parameters> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(FglError::config("not a checkpoint (bad magic)"));
    }
    let mut params = Parameters::zeros(config);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(FglError::config(format!(
            "checkpoint has {count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    for (name, shape) in &expected {
        let len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(len)?).map_err(|e| FglError::config(e.to_string()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if got != name || &dims != shape {
            return Err(FglError::config(format!(
                "tensor {got} {dims:?} does not match expected {name} {shape:?}"
            )));
        }
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(FglError::config("trailing bytes in checkpoint"));
    }
    Ok(params)
}

/// Hex SHA-256 of the serialized parameters.
pub fn fingerprint(params: &Parameters) -> String {
    hex_digest(&to_bytes(params))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

pub fn save(model: &ForecastModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(&model.params)).map_err(|e| FglError::io(path, e))?;
    let side = sidecar(path);
    let text = toml::to_string(&model.config).map_err(|e| FglError::config(e.to_string()))?;
    fs::write(&side, text).map_err(|e| FglError::io(side, e))
}

pub fn load(path: &Path) -> Result<ForecastModel> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| FglError::io(&side, e))?;
    let config: ModelConfig = toml::from_str(&text).map_err(|e| FglError::Parse {
        path: side.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    config.validate()?;
    let bytes = fs::read(path).map_err(|e| FglError::io(path, e))?;
    Ok(ForecastModel {
        params: from_bytes(&bytes, &config)?,
        config,
    })
}
