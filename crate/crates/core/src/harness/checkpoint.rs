//! Parameter blobs with a JSON sidecar.
//!
//! Blob layout (little endian): magic `GOSKCKPT`, `u32` format version,
//! `u32` tensor count, then per tensor `u32` name length, UTF-8 name, `u32`
//! rank, `u64` dims, `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, TrainConfig};
use super::loss::LossParts;
use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::model::{GosModel, ModelConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GOSKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: usize,
    pub config_hash: String,
    pub config: TrainConfig,
    pub model: ModelConfig,
    /// Mean loss components over the last epoch's worth of steps.
    pub loss_means: LossParts,
    /// Blob file name, relative to the sidecar.
    pub blob: String,
    pub blob_sha256: String,
}

pub fn encode_params(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for id in params.ids() {
        let name = params.name(id).as_bytes();
        let t = params.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("blob truncated".into()))?;
        let s = &self.buf[self.pos..end];
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

/// Overwrite `params` with the blob's tensors; names, order and shapes must
/// match exactly.
pub fn decode_params_into(bytes: &[u8], params: &mut ParamStore) -> Result<()> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let count = r.u32()? as usize;
    if count != params.len() {
        return Err(Error::Checkpoint(format!("blob has {count} tensors, model has {}", params.len())));
    }
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("tensor name not UTF-8".into()))?;
        if name != params.name(id) {
            return Err(Error::Checkpoint(format!("expected tensor {}, found {name}", params.name(id))));
        }
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        if shape != params.get(id).shape() {
            return Err(Error::Checkpoint(format!("{name}: shape {shape:?} vs {:?}", params.get(id).shape())));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        *params.get_mut(id) = Tensor::new(shape, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(())
}

/// Write `<stem>.bin` and `<stem>.json` into `dir`; returns the sidecar path.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    model: &GosModel,
    config: &TrainConfig,
    step: usize,
    loss_means: LossParts,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let blob = encode_params(&model.params);
    let blob_name = format!("{stem}.bin");
    fs::write(dir.join(&blob_name), &blob)?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        step,
        config_hash: config.hash(),
        config: config.clone(),
        model: model.config.clone(),
        loss_means,
        blob: blob_name,
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    let sidecar = dir.join(format!("{stem}.json"));
    fs::write(&sidecar, serde_json::to_vec_pretty(&meta)?)?;
    Ok(sidecar)
}

/// Rebuild the model described by a sidecar and load its parameters.
pub fn load_checkpoint(sidecar: &Path) -> Result<(GosModel, CheckpointMeta)> {
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", sidecar.display()));
    let meta: CheckpointMeta =
        serde_json::from_slice(&fs::read(sidecar).map_err(|e| bad(e.to_string()))?).map_err(|e| bad(e.to_string()))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion { found: meta.format_version, expected: CHECKPOINT_VERSION });
    }
    let blob_path = sidecar.parent().unwrap_or(Path::new(".")).join(&meta.blob);
    let blob = fs::read(&blob_path).map_err(|e| bad(format!("{}: {e}", blob_path.display())))?;
    if hex(&Sha256::digest(&blob)) != meta.blob_sha256 {
        return Err(bad("blob checksum mismatch".into()));
    }
    let mut model = GosModel::new(&meta.model, meta.config.seed)?;
    decode_params_into(&blob, &mut model.params)?;
    Ok((model, meta))
}
