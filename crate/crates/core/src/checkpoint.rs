//! Model checkpoint container.
//!
//! Layout: magic `MILKIT1\0`, u64 LE header length, JSON header (config,
//! class names, training metadata, tensor directory), then the tensors as
//! little-endian f32 in directory order. Offsets are bytes into the payload.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::model::{init_params, MilModel, ModelConfig};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MILKIT1\0";
pub const FORMAT_VERSION: u32 = 1;

/// Where the checkpoint came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epoch whose parameters were kept (1-based), 0 for untrained models.
    pub epoch: usize,
    pub val_weighted_accuracy: Option<f64>,
    /// Train / validation / test fractions used to split the data.
    pub split: [f64; 3],
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta {
            seed: 0,
            epoch: 0,
            val_weighted_accuracy: None,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    class_names: Vec<String>,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub meta: TrainingMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: &MilModel, class_names: Vec<String>, meta: TrainingMeta) -> Result<Self> {
        if class_names.len() != model.config.n_classes {
            return Err(MilError::Config(format!(
                "{} class names for a {}-class model",
                class_names.len(),
                model.config.n_classes
            )));
        }
        Ok(Checkpoint {
            config: model.config.clone(),
            class_names,
            meta,
            params: model.params.clone(),
        })
    }

    pub fn model(&self) -> MilModel {
        MilModel {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut payload = Vec::with_capacity(self.params.num_scalars() * 4);
        for (name, slot) in self.params.iter() {
            if !slot.value.is_finite() {
                return Err(MilError::NonFinite(format!("parameter {name} in checkpoint")));
            }
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: slot.value.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for &v in slot.value.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            class_names: self.class_names.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: String| MilError::format(path, msg);
        if bytes.len() < 16 {
            return Err(err(format!("file is {} bytes, shorter than the 16-byte preamble", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(err("bad magic at byte 0 (expected MILKIT1)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| err(format!("header length {header_len} at byte 8 exceeds file size {}", bytes.len())))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| err(format!("header at byte 16: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(err(format!("unsupported format version {}", header.format_version)));
        }
        header.config.validate()?;
        if header.class_names.len() != header.config.n_classes {
            return Err(err(format!(
                "{} class names for n_classes = {}",
                header.class_names.len(),
                header.config.n_classes
            )));
        }

        // The parameter set must be exactly what the config builds.
        let template = init_params(&header.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let payload = &bytes[header_end..];
        let mut params = ParamStore::new();
        let mut expected_offset = 0u64;
        for entry in &header.tensors {
            let want = template
                .value(&entry.name)
                .map_err(|_| err(format!("tensor {} is not part of this model configuration", entry.name)))?;
            if want.shape() != entry.shape.as_slice() {
                return Err(err(format!(
                    "tensor {} has shape {:?}, configuration implies {:?}",
                    entry.name,
                    entry.shape,
                    want.shape()
                )));
            }
            if entry.offset != expected_offset {
                return Err(err(format!(
                    "tensor {} offset {} (expected {expected_offset})",
                    entry.name, entry.offset
                )));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(err(format!(
                    "tensor {} runs past end of file (byte {})",
                    entry.name,
                    header_end + end
                )));
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(err(format!(
                    "non-finite value in tensor {} at byte {}",
                    entry.name,
                    header_end + start + 4 * i
                )));
            }
            params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
            expected_offset = end as u64;
        }
        if expected_offset as usize != payload.len() {
            return Err(err(format!(
                "{} trailing bytes after the last tensor",
                payload.len() - expected_offset as usize
            )));
        }
        if let Some(missing) = template.names().find(|n| !params.contains(n)) {
            return Err(err(format!("missing tensor {missing}")));
        }
        Ok(Checkpoint {
            config: header.config,
            class_names: header.class_names,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| MilError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| MilError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails naming the first field where the checkpoint and the data disagree.
    pub fn check_compatible(&self, d_in: usize, class_names: &[String], d_prompt: Option<usize>) -> Result<()> {
        let mismatch = |field: &str, ckpt: String, data: String| {
            Err(MilError::Config(format!(
                "checkpoint/data mismatch in {field}: checkpoint has {ckpt}, data has {data}"
            )))
        };
        if self.config.d_in != d_in {
            return mismatch("d_in", self.config.d_in.to_string(), d_in.to_string());
        }
        if self.config.n_classes != class_names.len() {
            return mismatch("n_classes", self.config.n_classes.to_string(), class_names.len().to_string());
        }
        if self.class_names != class_names {
            return mismatch("class_names", format!("{:?}", self.class_names), format!("{class_names:?}"));
        }
        if self.config.uses_prompts() {
            match d_prompt {
                None => return mismatch("d_prompt", self.config.d_prompt.to_string(), "no prompt bank".into()),
                Some(d) if d != self.config.d_prompt => {
                    return mismatch("d_prompt", self.config.d_prompt.to_string(), d.to_string())
                }
                _ => {}
            }
        }
        Ok(())
    }
}
