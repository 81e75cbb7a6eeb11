//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   "GAPSEGCK"
//! version   u32       1
//! length    u64       byte length of the manifest
//! manifest  JSON      model config, train config, vocabulary, metadata and
//!                     one {name, shape, offset, trainable} entry per tensor
//! payload   f64 LE    tensor data in manifest order; offsets are in bytes
//!                     from the start of the payload
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Segmenter};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainMeta};

pub const MAGIC: &[u8; 8] = b"GAPSEGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    train: Option<TrainConfig>,
    vocab: String,
    meta: TrainMeta,
    tensors: Vec<TensorEntry>,
}

/// A model plus the settings and metadata it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub model: Segmenter<T>,
    pub train: Option<TrainConfig>,
    pub meta: TrainMeta,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (_, p) in self.model.params().iter() {
            entries.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: payload.len() as u64,
                trainable: p.trainable,
            });
            for v in p.value.data() {
                payload.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        let manifest = Manifest {
            model: *self.model.config(),
            train: self.train,
            vocab: self.model.vocab().known().iter().collect(),
            meta: self.meta,
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8, "magic")? != MAGIC {
            return Err(Error::checkpoint("magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let len = u64::from_le_bytes(cur.take(8, "manifest length")?.try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| Error::checkpoint("manifest length", "too large"))?;
        let manifest: Manifest = serde_json::from_slice(cur.take(len, "manifest")?)
            .map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
        let payload = &bytes[cur.pos..];

        let config = manifest.model;
        let labels = config.label_count();
        if let Some(b) = manifest.tensors.iter().find(|t| t.name == "scorer.b_gap") {
            if b.shape != [labels] {
                return Err(Error::Config(format!(
                    "checkpoint scorer has {:?} labels but tag set {} has {labels}",
                    b.shape,
                    config.tagset
                )));
            }
        }

        let vocab = Vocabulary::from_chars(manifest.vocab.chars())
            .map_err(|e| Error::checkpoint("vocab", e.to_string()))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected_offset = 0u64;
        for entry in manifest.tensors {
            if entry.offset != expected_offset {
                return Err(Error::checkpoint(
                    &entry.name,
                    format!("offset {} but expected {expected_offset}", entry.offset),
                ));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 8 * count;
            let raw = payload.get(start..end).ok_or_else(|| {
                Error::checkpoint(&entry.name, format!("payload truncated: needs bytes {start}..{end}, has {}", payload.len()))
            })?;
            let data: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            expected_offset = end as u64;
            let tensor = Tensor::new(entry.shape, data).map_err(|e| Error::checkpoint(&entry.name, e.to_string()))?;
            tensors.push((entry.name, tensor, entry.trainable));
        }
        if payload.len() as u64 != expected_offset {
            return Err(Error::checkpoint(
                "payload",
                format!("{} trailing bytes", payload.len() as u64 - expected_offset),
            ));
        }
        let model = Segmenter::from_tensors(config, vocab, tensors)?;
        Ok(Checkpoint {
            model,
            train: manifest.train,
            meta: manifest.meta,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::checkpoint(field, "stream truncated"));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}
