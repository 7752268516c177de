//! `STNETCKP` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "STNETCKP"
//! version    u32      currently 1
//! header     u32 length + UTF-8 JSON
//! count      u32      number of tensors
//! per tensor u32 name length, name, u32 rank, rank × u64 dims,
//!            product(dims) × f32 values in row-major order
//! ```
//!
//! A model checkpoint's JSON header holds the full model config and the
//! training metadata; external weight files use the same container with a
//! free-form header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const MAGIC: &[u8; 8] = b"STNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub seed: u64,
    #[serde(default)]
    pub pretrained_backbone: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    variant: super::Variant,
    config: ModelConfig,
    meta: CheckpointMeta,
}

/// A parsed container: header JSON and named tensors in file order.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    fn model_header(&self) -> Result<ModelHeader> {
        let h: ModelHeader = serde_json::from_value(self.header.clone())
            .map_err(|e| Error::format(format!("checkpoint header is not a model header: {e}")))?;
        if h.variant != h.config.variant {
            return Err(Error::integrity(format!(
                "checkpoint variant tag {} disagrees with its config ({})",
                h.variant, h.config.variant
            )));
        }
        Ok(h)
    }

    pub fn config(&self) -> Result<ModelConfig> {
        Ok(self.model_header()?.config)
    }

    pub fn meta(&self) -> Result<CheckpointMeta> {
        Ok(self.model_header()?.meta)
    }
}

pub(crate) fn encode(header: &serde_json::Value, tensors: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header).map_err(|e| Error::format(e.to_string()))?;
    let len32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::format(format!("{what} too large for the container ({n})")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&len32(header.len(), "header")?.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&len32(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&len32(name.len(), "name")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&len32(t.dims().len(), "rank")?.to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!(
                "truncated container: needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!("bad magic {:?}, expected \"STNETCKP\"", String::from_utf8_lossy(magic))));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = r.u32("header length")? as usize;
    let header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::format(format!("checkpoint header is not JSON: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::format(format!("tensor {i} name is not UTF-8")))?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(usize::try_from(r.u64("dimension")?).map_err(|_| Error::format("dimension overflow"))?);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(format!("tensor '{name}' size overflows")))?;
        let raw = r.take(numel, &format!("tensor '{name}'"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::format(format!("tensor '{name}': {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { version, header, tensors })
}

/// Write through a temporary file and rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
    let meta = CheckpointMeta { pretrained_backbone: model.pretrained_backbone(), ..meta.clone() };
    let header = ModelHeader { variant: model.variant(), config: model.config().clone(), meta };
    let header = serde_json::to_value(&header).map_err(|e| Error::format(e.to_string()))?;
    let bytes = encode(&header, &model.named_params())?;
    write_atomically(path.as_ref(), &bytes)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    decode(&bytes).map_err(|e| e.context(path.display().to_string()))
}

fn restore(mut model: Model<f32>, ckpt: Checkpoint) -> Result<Model<f32>> {
    let expected: Vec<(String, Vec<usize>)> =
        model.named_params().into_iter().map(|(n, t)| (n, t.dims().to_vec())).collect();
    for (i, (name, dims)) in expected.iter().enumerate() {
        match ckpt.tensors.get(i) {
            Some((n, t)) if n == name && t.dims() == dims.as_slice() => {}
            Some((n, t)) => {
                return Err(Error::integrity(format!(
                    "parameter '{name}' {dims:?} does not match checkpoint entry '{n}' {:?}",
                    t.dims()
                )))
            }
            None => return Err(Error::integrity(format!("parameter '{name}' missing from checkpoint"))),
        }
    }
    if let Some((n, _)) = ckpt.tensors.get(expected.len()) {
        return Err(Error::integrity(format!("checkpoint has unexpected extra parameter '{n}'")));
    }
    for (slot, (_, t)) in model.params_mut().into_iter().zip(ckpt.tensors) {
        *slot = t;
    }
    Ok(model)
}

/// Rebuild the model described by the checkpoint header and restore every
/// parameter. Nothing is returned unless the whole file validates.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let ckpt = read_checkpoint(path)?;
    let header = ckpt.model_header()?;
    let mut model = restore(Model::build(&header.config, 0)?, ckpt)?;
    model.set_pretrained_backbone(header.meta.pretrained_backbone);
    Ok((model, header.meta))
}

/// Load into the architecture given by `config`; the checkpoint's own
/// config is only used for the variant check.
pub fn load_checkpoint_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<(Model<f32>, CheckpointMeta)> {
    let ckpt = read_checkpoint(path)?;
    let header = ckpt.model_header()?;
    let mut model = restore(Model::build(config, 0)?, ckpt).map_err(|e| {
        if header.config.variant != config.variant {
            e.context(format!("checkpoint is {}, expected {}", header.config.variant, config.variant))
        } else {
            e
        }
    })?;
    model.set_pretrained_backbone(header.meta.pretrained_backbone);
    Ok((model, header.meta))
}
