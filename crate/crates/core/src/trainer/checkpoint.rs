//! Checkpoint files.
//!
//! Layout: the ASCII line `VCLIPCKPT 1`, then one line of JSON (the manifest:
//! configs, vocabulary, tensor table, provenance and the payload's SHA-256),
//! then the payload. Each tensor is stored as little-endian `f32` in row-major
//! order at `offset` bytes into the payload, `nbytes` long, in manifest order.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Regime;
use crate::encoders::{DualEncoder, ModelConfig, ParameterStore, Vocabulary};
use crate::error::{Error, Result};
use crate::prompting::PromptConfig;

pub const CHECKPOINT_MAGIC: &str = "VCLIPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_TAG: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub regime: Regime,
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub config_hash: String,
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabRecord {
    words: Vec<String>,
    template: String,
    max_tokens: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    model_config: ModelConfig,
    prompt_config: Option<PromptConfig>,
    vocabulary: VocabRecord,
    tensors: Vec<TensorEntry>,
    provenance: Provenance,
    payload_sha256: String,
}

/// A model plus where it came from.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: DualEncoder,
    pub provenance: Provenance,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl Checkpoint {
    pub fn new(model: DualEncoder, provenance: Provenance) -> Self {
        Self { model, provenance }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, var) in self.model.params.iter() {
            let t = var.as_tensor();
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let offset = payload.len() as u64;
            for v in &values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.dims().to_vec(),
                dtype: DTYPE_TAG.to_string(),
                offset,
                nbytes: values.len() as u64 * 4,
            });
        }
        let vocab = &self.model.vocab;
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            model_config: self.model.config.clone(),
            prompt_config: self.model.prompts.clone(),
            vocabulary: VocabRecord {
                words: vocab.words().to_vec(),
                template: vocab.template().to_string(),
                max_tokens: vocab.max_tokens(),
            },
            tensors,
            provenance: self.provenance.clone(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n").into_bytes();
        out.extend(serde_json::to_vec(&manifest)?);
        out.push(b'\n');
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        if magic != expected.as_bytes() {
            return Err(integrity(format!(
                "not a version-{CHECKPOINT_VERSION} checkpoint (header `{}`)",
                String::from_utf8_lossy(&magic[..magic.len().min(32)])
            )));
        }
        let header = lines.next().ok_or_else(|| integrity("checkpoint manifest missing"))?;
        let payload = lines.next().ok_or_else(|| integrity("checkpoint payload missing"))?;
        let manifest: Manifest =
            serde_json::from_slice(header).map_err(|e| integrity(format!("checkpoint manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(integrity(format!("format_version {}", manifest.format_version)));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(integrity("payload digest does not match the manifest"));
        }
        let mut params = ParameterStore::new(DType::F32, Device::Cpu);
        let mut cursor = 0u64;
        for e in &manifest.tensors {
            let numel: usize = e.shape.iter().product();
            if e.dtype != DTYPE_TAG || e.nbytes != numel as u64 * 4 || e.offset != cursor {
                return Err(integrity(format!("tensor `{}` has an inconsistent table entry", e.name)));
            }
            let end = (e.offset + e.nbytes) as usize;
            let raw = payload
                .get(e.offset as usize..end)
                .ok_or_else(|| integrity(format!("tensor `{}` runs past the payload", e.name)))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            params.insert(&e.name, Tensor::from_vec(values, e.shape.as_slice(), &Device::Cpu)?)?;
            cursor = end as u64;
        }
        if cursor as usize != payload.len() {
            return Err(integrity("trailing bytes after the last tensor"));
        }
        let v = manifest.vocabulary;
        let vocab = Vocabulary::from_parts(v.words, v.template, v.max_tokens)?;
        if vocab.len() != manifest.model_config.text.vocab_size {
            return Err(integrity("vocabulary size differs from model_config.text.vocab_size"));
        }
        let model = DualEncoder::from_parts(manifest.model_config, manifest.prompt_config, vocab, params)?;
        check_layout(&model)?;
        Ok(Self {
            model,
            provenance: manifest.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

/// The stored tensors must be exactly those a fresh model of this config has.
fn check_layout(model: &DualEncoder) -> Result<()> {
    let mut fresh = DualEncoder::new(model.config.clone(), model.vocab.clone(), DType::F32)?;
    if let Some(pc) = &model.prompts {
        fresh.attach_prompts(pc.clone(), 0)?;
    }
    let want: Vec<(&str, Vec<usize>)> = fresh.params.iter().map(|(n, v)| (n, v.as_tensor().dims().to_vec())).collect();
    let have: Vec<(&str, Vec<usize>)> = model.params.iter().map(|(n, v)| (n, v.as_tensor().dims().to_vec())).collect();
    if want != have {
        return Err(integrity("tensor names or shapes do not match the model config"));
    }
    Ok(())
}
