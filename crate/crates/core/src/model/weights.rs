//! Weight container: a JSON manifest naming every tensor with its shape, and a
//! raw blob of little-endian binary32 values in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::ring::RealTensor;

const FORMAT: &str = "centaur-weights";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Manifest and blob paths sharing one prefix (`<prefix>.json`, `<prefix>.bin`).
#[derive(Clone, Debug)]
pub struct WeightFiles {
    pub manifest: PathBuf,
    pub blob: PathBuf,
}

impl WeightFiles {
    pub fn from_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref();
        let mut manifest = p.as_os_str().to_owned();
        manifest.push(".json");
        let mut blob = p.as_os_str().to_owned();
        blob.push(".bin");
        Self {
            manifest: manifest.into(),
            blob: blob.into(),
        }
    }
}

pub fn to_bytes(params: &ModelParams) -> (WeightManifest, Vec<u8>) {
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(params.parameter_count() * 4);
    let mut offset = 0;
    for (name, t) in params.named_tensors() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = WeightManifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f32".into(),
        config: params.config.clone(),
        tensors,
    };
    (manifest, blob)
}

pub fn from_bytes(manifest: &WeightManifest, blob: &[u8]) -> Result<ModelParams> {
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype {}", manifest.dtype)));
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::Format("blob length is not a multiple of 4".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();

    let mut params = ModelParams::zeros(&manifest.config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "config implies {} tensors, manifest lists {}",
            expected.len(),
            manifest.tensors.len()
        )));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(Error::Format(format!(
            "blob holds {} values, config needs {total}",
            values.len()
        )));
    }
    for (((name, shape), entry), slot) in expected.iter().zip(&manifest.tensors).zip(params.tensors_mut()) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Format(format!(
                "expected {name} {shape:?}, manifest has {} {:?}",
                entry.name, entry.shape
            )));
        }
        let len: usize = shape.iter().product();
        let data = values
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::Format(format!("{name} runs past the blob")))?;
        *slot = RealTensor::new(shape.clone(), data.to_vec())?;
    }
    Ok(params)
}

pub fn save(params: &ModelParams, files: &WeightFiles) -> Result<()> {
    let (manifest, blob) = to_bytes(params);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&files.manifest, text + "\n")?;
    fs::write(&files.blob, blob)?;
    Ok(())
}

pub fn load(files: &WeightFiles) -> Result<ModelParams> {
    let text = fs::read_to_string(&files.manifest)?;
    let manifest: WeightManifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let blob = fs::read(&files.blob)?;
    from_bytes(&manifest, &blob)
}
