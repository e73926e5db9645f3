//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "PRSLCKPT"
//! 8       4     format version (u32)
//! 12      32    SHA-256 digest of every byte that follows
//! 44      8     header length H (u64)
//! 52      H     header JSON: {"spec": ..., "meta": ...}
//! ..      8     parameter count (u64)
//! ```
//!
//! then per parameter, in name-sorted order:
//!
//! ```text
//! 8     name byte length, then the UTF-8 name
//! 8     rank, then rank x 8 bytes of dimension sizes
//! 8     value count, then count x 8 bytes of f64 bits
//! ```
//!
//! The digest covers the header and all parameter records, so a corrupted
//! byte anywhere fails closed before any field is parsed.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::{ParamStore, Tensor};

use super::captioner::CaptionerSpec;
use super::classifier::ClassifierSpec;
use super::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Classifier(ClassifierSpec),
    Captioner(CaptionerSpec),
}

impl ModelSpec {
    /// Number of classes the loss ranks over: label classes or vocabulary.
    pub fn class_count(&self) -> usize {
        match self {
            ModelSpec::Classifier(s) => s.classes,
            ModelSpec::Captioner(s) => s.vocab,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config_hash: String,
    pub final_total: f64,
    pub final_ce: f64,
    pub final_penalty: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    meta: TrainMeta,
}

impl Checkpoint {
    /// SHA-256 over the canonical JSON of (config, spec), as a hex string.
    pub fn config_hash(config: &TrainConfig, spec: &ModelSpec) -> String {
        let json = serde_json::to_string(&(config, spec)).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Exact equality including every parameter bit.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        if self.version != other.version || self.spec != other.spec || self.meta.config_hash != other.meta.config_hash {
            return false;
        }
        if self.params.len() != other.params.len() {
            return false;
        }
        self.params.iter().zip(other.params.iter()).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta.data().iter().zip(tb.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut payload = Vec::new();
        let header = Header { spec: self.spec.clone(), meta: self.meta.clone() };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| CoreError::CheckpointFormat { detail: e.to_string() })?;
        payload.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        payload.extend_from_slice(&header_json);
        payload.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, tensor) in self.params.iter() {
            payload.extend_from_slice(&(name.len() as u64).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            payload.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
            for &dim in tensor.shape() {
                payload.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            payload.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
            for &value in tensor.data() {
                payload.extend_from_slice(&value.to_bits().to_le_bytes());
            }
        }

        let mut file = Vec::with_capacity(44 + payload.len());
        file.extend_from_slice(CHECKPOINT_MAGIC);
        file.extend_from_slice(&self.version.to_le_bytes());
        file.extend_from_slice(&Sha256::digest(&payload));
        file.extend_from_slice(&payload);
        fs::write(path, file)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        if bytes.len() < 44 {
            return Err(CoreError::CheckpointTruncated);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CoreError::CheckpointFormat { detail: "bad magic".to_string() });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CoreError::CheckpointVersion { expected: CHECKPOINT_VERSION, got: version });
        }
        let stored_digest = &bytes[12..44];
        let payload = &bytes[44..];
        if Sha256::digest(payload).as_slice() != stored_digest {
            return Err(CoreError::CheckpointChecksum);
        }

        let mut cursor = Cursor::new(payload);
        let header_len = read_u64(&mut cursor)? as usize;
        let mut header_json = vec![0u8; header_len];
        cursor.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| CoreError::CheckpointFormat { detail: e.to_string() })?;

        let count = read_u64(&mut cursor)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u64(&mut cursor)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            cursor.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CoreError::CheckpointFormat { detail: "non-utf8 name".to_string() })?;
            let rank = read_u64(&mut cursor)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut cursor)? as usize);
            }
            let value_count = read_u64(&mut cursor)? as usize;
            if shape.iter().product::<usize>() != value_count {
                return Err(CoreError::CheckpointFormat {
                    detail: format!("shape {shape:?} disagrees with {value_count} values"),
                });
            }
            let mut data = Vec::with_capacity(value_count);
            for _ in 0..value_count {
                let mut buf = [0u8; 8];
                cursor.read_exact(&mut buf)?;
                data.push(f64::from_bits(u64::from_le_bytes(buf)));
            }
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        let mut rest = Vec::new();
        cursor.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CoreError::CheckpointFormat {
                detail: format!("{} trailing bytes", rest.len()),
            });
        }

        Ok(Checkpoint { version, spec: header.spec, params, meta: header.meta })
    }
}

fn read_u64(cursor: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut buf = [0u8; 8];
    cursor.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
