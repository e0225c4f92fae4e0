//! Binary checkpoint: `"MSQC"`, `u32` version, `u64` length + JSON header
//! (network config, neighbor lists, free-form metadata), `u64` Adam step,
//! `u32` parameter count, then per parameter: `u32` name length, name,
//! `u8` decay flag, `u32` rank, `u64` dims, and value, first and second
//! moment as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GeneratorModel, NetConfig};
use crate::autodiff::{Param, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSQC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    neighbors: Vec<Vec<usize>>,
    meta: serde_json::Value,
}

/// A model with its optimizer state and caller-defined metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: GeneratorModel,
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(model: &GeneratorModel, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        neighbors: model.neighbors.clone(),
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(64 + header.len() + 24 * model.store.numel());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&model.store.step.to_le_bytes());
    out.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (_, p) in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.decay as u8);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for buf in [p.value.data(), &p.m, &p.v] {
            for x in buf {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = r.len()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let decay = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad decay flag {other} for {name}"))),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("shape overflows".into()))?;
        let value = Tensor::new(shape, r.f64s(n)?)?;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        let id = store.add(name, value, decay)?;
        let p: &mut Param = store.get_mut(id);
        p.m = m;
        p.v = v;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    store.step = step;
    let model = GeneratorModel::from_parts(header.config, header.neighbors, store)?;
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

/// Writes through a temporary file so a crash never leaves a partial checkpoint.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &GeneratorModel,
    meta: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
