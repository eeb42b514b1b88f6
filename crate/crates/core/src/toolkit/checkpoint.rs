//! Versioned binary checkpoints: `MGCK`, a JSON metadata block, then a
//! table of named little-endian f32 tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{init_params, ModelConfig};
use crate::error::{Error, Result};
use crate::tensorcore::ParamStore;

pub const MAGIC: &[u8; 4] = b"MGCK";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// One completed training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub stage: u8,
    pub steps: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub model: ModelConfig,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

impl Metadata {
    pub fn new(model: ModelConfig) -> Self {
        Metadata { model, stages: Vec::new() }
    }

    pub fn last_stage(&self) -> u8 {
        self.stages.last().map_or(0, |s| s.stage)
    }
}

pub fn encode_checkpoint(params: &ParamStore, meta: &Metadata) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint tensor `{name}`")));
        }
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("tensor name too long: {} bytes", name.len())))?;
        let rank = u8::try_from(p.shape.len()).map_err(|_| Error::Contract(format!("rank of `{name}` exceeds 255")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(rank);
        for &d in &p.shape {
            let d = u32::try_from(d).map_err(|_| Error::Contract(format!("dimension of `{name}` exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Parse {
            offset: at as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()) {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, format!("truncated {what}: need {n} bytes"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, Metadata)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| r.fail(meta_at, format!("metadata: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let entry_at = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| r.fail(entry_at + 2, "tensor name is not UTF-8"))?
            .to_string();
        if params.contains(&name) {
            return Err(r.fail(entry_at, format!("duplicate tensor `{name}`")));
        }
        let dtype_at = r.pos;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(r.fail(dtype_at, format!("unknown dtype code {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let payload_at = r.pos;
        let bytes_needed = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.fail(payload_at, format!("`{name}` size overflows")))?;
        let data: Vec<f32> = r
            .take(bytes_needed, &format!("payload of `{name}`"))?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params
            .insert(name, shape, data)
            .map_err(|e| r.fail(payload_at, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((params, meta))
}

pub fn save_checkpoint(params: &ParamStore, meta: &Metadata, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, Metadata)> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Every tensor `cfg` needs must be present with the shape `cfg` implies;
/// extra tensors are rejected too. Missing tensors report `found = []`.
pub fn check_shapes(params: &ParamStore, cfg: &ModelConfig) -> Result<()> {
    let want = init_params(cfg, 0)?;
    for (name, p) in want.iter() {
        let found = params.get(name).map(|q| q.shape.clone()).unwrap_or_default();
        if found != p.shape {
            return Err(Error::ShapeDiff {
                name: name.clone(),
                found,
                expected: p.shape.clone(),
            });
        }
    }
    if let Some((name, p)) = params.iter().find(|(n, _)| !want.contains(n)) {
        return Err(Error::ShapeDiff {
            name: name.clone(),
            found: p.shape.clone(),
            expected: Vec::new(),
        });
    }
    Ok(())
}
