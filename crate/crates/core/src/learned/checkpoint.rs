//! Checkpoint container: `"SMRI"`, `u32` format version, `u64` header length,
//! canonical JSON header, then every parameter as little-endian `f64` in
//! registration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{construct_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SMRI";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<Tensor>,
    pub epoch: usize,
    /// Content hash of the dataset the parameters were trained on.
    pub train_fingerprint: String,
    /// Seed from which the next epoch's shuffling and masks are derived.
    pub rng_seed: u64,
    /// Image extents seen during training.
    pub extents: (usize, usize),
    /// Fingerprints of ancestor checkpoints, oldest first.
    pub provenance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    train_fingerprint: String,
    rng_seed: u64,
    extents: (usize, usize),
    provenance: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        let mut m = construct_model(&self.config)?;
        if m.params.len() != self.params.len()
            || m.params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Format("checkpoint parameters do not match its model config".into()));
        }
        m.params = self.params.clone();
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            train_fingerprint: self.train_fingerprint.clone(),
            rng_seed: self.rng_seed,
            extents: self.extents,
            provenance: self.provenance.clone(),
            shapes: self.params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        // serde_json emits struct fields in declaration order, which makes
        // the header canonical.
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.iter().map(Tensor::numel).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(len))
            .ok_or_else(|| Error::Truncated("checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut rest = &bytes[16 + len..];
        let mut params = Vec::with_capacity(header.shapes.len());
        for shape in header.shapes {
            let n: usize = shape.iter().product();
            if rest.len() < 8 * n {
                return Err(Error::Truncated("checkpoint parameter payload".into()));
            }
            let data = rest[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(shape, data)?);
            rest = &rest[8 * n..];
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint payload", rest.len())));
        }
        let ck = Self {
            config: header.config,
            params,
            epoch: header.epoch,
            train_fingerprint: header.train_fingerprint,
            rng_seed: header.rng_seed,
            extents: header.extents,
            provenance: header.provenance,
        };
        ck.model()?;
        Ok(ck)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
