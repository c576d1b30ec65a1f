//! Parameter checkpoints: a JSON manifest next to a little-endian `f32`
//! blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{NetworkParams, StnetConfig};
use super::tensor::Tensor;
use crate::util::{write_atomic, write_json_atomic};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vqlab-stnet";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub format: String,
    pub dtype: String,
    pub data_file: String,
    pub seed: u64,
    pub config: StnetConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form settings recorded by the caller (preprocessing, training).
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (JSON) and `<path>` with extension `.bin`.
pub fn save_checkpoint(
    params: &NetworkParams,
    path: &Path,
    extra: serde_json::Value,
) -> Result<()> {
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(params.store.scalar_count() * 4);
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in params.store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        schema_version: crate::SCHEMA_VERSION,
        format: CHECKPOINT_FORMAT.into(),
        dtype: "f32le".into(),
        data_file: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        seed: params.seed,
        config: params.config.clone(),
        tensors,
        extra,
    };
    write_atomic(&blob, &bytes)?;
    write_json_atomic(path, &manifest)
}

/// Reads a checkpoint, checking every tensor against the topology implied
/// by its config.
pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != "f32le" {
        return Err(Error::Config(format!(
            "{} is not a {CHECKPOINT_FORMAT} f32le checkpoint",
            path.display()
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&manifest.data_file))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Config(
            "checkpoint blob length is not a multiple of 4".into(),
        ));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut params = NetworkParams::init(manifest.config.clone(), manifest.seed)?;
    if manifest.tensors.len() != params.store.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, config expects {}",
            manifest.tensors.len(),
            params.store.len()
        )));
    }
    for e in &manifest.tensors {
        let id = params.store.id(&e.name)?;
        let expect = params.store.get(id).shape().to_vec();
        if expect != e.shape {
            return Err(Error::ShapeMismatch(format!(
                "{}: checkpoint {:?}, config {expect:?}",
                e.name, e.shape
            )));
        }
        let n: usize = e.shape.iter().product();
        let src = floats
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Config(format!("{} runs past the end of the blob", e.name)))?;
        let t = Tensor::new(e.shape.clone(), src.iter().map(|&v| v as f64).collect())?;
        if !t.is_finite() {
            return Err(Error::Config(format!("{} holds non-finite values", e.name)));
        }
        *params.store.get_mut(id) = t;
    }
    Ok((params, manifest))
}
