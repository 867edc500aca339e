//! Single-file checkpoint archive.
//!
//! Layout: 8-byte magic, format version (u32 LE), header length (u64 LE),
//! a JSON header, then every tensor as little-endian f32 in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::ModelParams;
use crate::training::config::TrainConfig;
use crate::training::history::{EpochRecord, StageRecord};

pub const MAGIC: &[u8; 8] = b"GAUPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams<f32>,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stages: Vec<StageRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    history: Vec<EpochRecord>,
    stages: Vec<StageRecord>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn fresh(model: ModelConfig, params: ModelParams<f32>) -> Self {
        Self {
            model,
            params,
            train: None,
            epoch: 0,
            history: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.params.tensors();
        let header = Header {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            stages: self.stages.clone(),
            tensors: tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.data.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(json.len() + 20 + 4 * self.params.num_trainable());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &tensors {
            for v in t.data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::IncompatibleCheckpoint(m);
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated file".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint archive".into()));
        }
        let mut u4 = [0u8; 4];
        r.read_exact(&mut u4)
            .map_err(|_| bad("truncated file".into()))?;
        let version = u32::from_le_bytes(u4);
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut u8b = [0u8; 8];
        r.read_exact(&mut u8b)
            .map_err(|_| bad("truncated file".into()))?;
        let len = u64::from_le_bytes(u8b) as usize;
        if r.len() < len {
            return Err(bad("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&r[..len]).map_err(|e| bad(format!("header: {e}")))?;
        r = &r[len..];
        if header.format_version != version {
            return Err(bad("header version disagrees with preamble".into()));
        }
        header.model.validate()?;
        let mut params = ModelParams::<f32>::zeros(&header.model);
        let expected = params.shapes();
        let stored: Vec<(String, Vec<usize>)> = header
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();
        for (name, shape) in &expected {
            match stored.iter().find(|(n, _)| n == name) {
                None => return Err(bad(format!("missing tensor {name}"))),
                Some((_, s)) if s != shape => {
                    return Err(bad(format!(
                        "tensor {name} has shape {s:?}, expected {shape:?}"
                    )))
                }
                _ => {}
            }
        }
        if stored.len() != expected.len() {
            return Err(bad(format!(
                "{} stored tensors, model defines {}",
                stored.len(),
                expected.len()
            )));
        }
        // Stored order may differ from canonical order; index by name.
        let mut offsets = Vec::with_capacity(stored.len());
        let mut at = 0usize;
        for (name, shape) in &stored {
            let n: usize = shape.iter().product();
            offsets.push((name.clone(), at, n));
            at += n;
        }
        if r.len() != at * 4 {
            return Err(bad(format!(
                "payload has {} bytes, expected {}",
                r.len(),
                at * 4
            )));
        }
        for t in params.tensors_mut() {
            let (_, off, n) = offsets
                .iter()
                .find(|(k, _, _)| *k == t.name)
                .expect("checked above");
            let src = &r[off * 4..(off + n) * 4];
            let mut data = t.data;
            for (dst, chunk) in data.iter_mut().zip(src.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        if !params.is_finite() {
            return Err(Error::NumericFailure(
                "checkpoint contains non-finite values".into(),
            ));
        }
        Ok(Self {
            model: header.model,
            params,
            train: header.train,
            epoch: header.epoch,
            history: header.history,
            stages: header.stages,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
