//! Versioned binary model file.
//!
//! ```text
//! magic    8 bytes  "ISQMODEL"
//! version  u32 LE
//! manifest u32 LE length + JSON {config, tensors: [{name, shape, dtype}]}
//! payload  tensors in manifest order, row-major, little-endian
//! crc32    u32 LE over every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use super::real::{Precision, Real};
use super::{Model, ModelError};

const MAGIC: &[u8; 8] = b"ISQMODEL";
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Precision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptModelFile(msg.into())
}

impl<F: Real> Model<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.tensors();
        let manifest = Manifest {
            config: self.config.clone(),
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry { name: name.clone(), shape: shape.clone(), dtype: F::PRECISION })
                .collect(),
        };
        let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + self.params.n_params() * F::PRECISION.size() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, _, data) in &tensors {
            for v in data.iter() {
                v.write_le(&mut out);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a model file. When `expected` is given, the stored
    /// architecture must match it.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self, ModelError> {
        let manifest = read_manifest(bytes)?;
        let (manifest, payload_start) = manifest;
        if bytes.len() < payload_start + 4 {
            return Err(corrupt("file ends before payload"));
        }
        let body_end = bytes.len() - 4;
        let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored_crc {
            return Err(corrupt("checksum mismatch"));
        }
        let cfg = manifest.config;
        if let Some(exp) = expected {
            if *exp != cfg {
                return Err(ModelError::ShapeMismatch(format!(
                    "model file architecture {:?} differs from expected {:?}",
                    (&cfg.gru_widths, cfg.input_width, &cfg.classifier_widths),
                    (&exp.gru_widths, exp.input_width, &exp.classifier_widths)
                )));
            }
        }
        cfg.check()?;
        if cfg.precision != F::PRECISION || manifest.tensors.iter().any(|t| t.dtype != F::PRECISION) {
            return Err(ModelError::PrecisionMismatch { stored: cfg.precision, requested: F::PRECISION });
        }
        let mut params = ModelParams::<F>::zeros(&cfg);
        let expected_shapes: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected_shapes.len() != manifest.tensors.len()
            || expected_shapes.iter().zip(&manifest.tensors).any(|((n, s), t)| *n != t.name || *s != t.shape)
        {
            return Err(ModelError::ShapeMismatch("tensor manifest does not match the stored config".into()));
        }
        let size = F::PRECISION.size();
        let needed = params.n_params() * size;
        if body_end - payload_start != needed {
            return Err(corrupt(format!("payload is {} bytes, expected {needed}", body_end - payload_start)));
        }
        let mut cursor = payload_start;
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = F::read_le(&bytes[cursor..cursor + size]);
                cursor += size;
            }
        }
        Ok(Model { config: cfg, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, expected)
    }
}

fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize), ModelError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FILE_VERSION {
        return Err(corrupt(format!("unsupported model file version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).filter(|e| *e <= bytes.len()).ok_or_else(|| corrupt("manifest truncated"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    Ok((manifest, end))
}

/// Reads only the manifest's config, e.g. to pick the precision to load with.
pub fn read_model_config(path: impl AsRef<Path>) -> Result<ModelConfig, ModelError> {
    let bytes = std::fs::read(path)?;
    Ok(read_manifest(&bytes)?.0.config)
}
