//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `SAINTCKP`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header, then every parameter
//! tensor's data as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SAINTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model together with everything needed to use it on new data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: Option<TrainConfig>,
    pub manifest_hash: String,
    pub vocabulary: Vocabulary,
    pub epoch: usize,
    pub step: u64,
    pub val_auc: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train_config: Option<TrainConfig>,
    manifest_hash: String,
    vocabulary: Vocabulary,
    epoch: usize,
    step: u64,
    val_auc: Option<f64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let store = self.model.params();
        let header = Header {
            model: self.model.config().clone(),
            train_config: self.train_config.clone(),
            manifest_hash: self.manifest_hash.clone(),
            vocabulary: self.vocabulary.clone(),
            epoch: self.epoch,
            step: self.step,
            val_auc: self.val_auc,
            tensors: store
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * store.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in store.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = 20usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fail("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| Error::Format(e.to_string()))?;
        let mut model = Model::new(header.model, &mut RngStream::new(0))?;
        let store = model.params_mut();
        if store.len() != header.tensors.len() {
            return Err(fail("tensor list does not match the model layout"));
        }
        let mut offset = body;
        for (id, entry) in store.ids().collect::<Vec<_>>().into_iter().zip(&header.tensors) {
            if store.name(id) != entry.name || store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not match the model layout",
                    entry.name, entry.shape
                )));
            }
            let n: usize = entry.shape.iter().product();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(fail("truncated tensor data"));
            }
            let data = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *store.get_mut(id) = Tensor::new(entry.shape.clone(), data)?;
            offset = end;
        }
        if offset != bytes.len() {
            return Err(fail("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            model,
            train_config: header.train_config,
            manifest_hash: header.manifest_hash,
            vocabulary: header.vocabulary,
            epoch: header.epoch,
            step: header.step,
            val_auc: header.val_auc,
        })
    }

    /// Lowercase hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    /// Writes the checkpoint and returns its hash.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
