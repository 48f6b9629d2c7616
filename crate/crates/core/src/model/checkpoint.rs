//! Checkpoint directories: `manifest.json`, one `<tensor>.bin` payload per
//! tensor (little-endian, row-major) and one `<tensor>.mask` per weight
//! tensor (one byte per element, 0 or 1).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchId, ModelGraph, ParamTensor};
use crate::autograd::{Real, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch_id: ArchId,
    pub class_count: usize,
    pub input_shape: Vec<usize>,
    pub dtype: String,
    #[serde(default)]
    pub lineage: Option<serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    #[serde(default)]
    pub mask_file: Option<String>,
}

fn encode<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::PRECISION.byte_width());
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

/// Write `model` to `dir` (created if missing). `lineage` is stored verbatim
/// in the manifest.
pub fn save<T: Real>(model: &ModelGraph<T>, dir: &Path, lineage: Option<serde_json::Value>) -> Result<()> {
    let arch = model.arch.ok_or_else(|| {
        Error::InvalidArgument(format!("model `{}` is not a reference architecture", model.name))
    })?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dtype = T::PRECISION.dtype().to_string();
    let mut tensors = Vec::new();
    let write = |file: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(file);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    for layer in &model.layers {
        if let (Some(w), Some(b)) = (layer.weight(), layer.bias()) {
            let file = format!("{}.bin", w.name);
            let mask_file = format!("{}.mask", w.name);
            write(&file, &encode(w.weights.data()))?;
            write(&mask_file, &w.mask().iter().map(|&m| m as u8).collect::<Vec<_>>())?;
            tensors.push(TensorEntry {
                name: w.name.clone(),
                shape: w.shape().to_vec(),
                dtype: dtype.clone(),
                file,
                mask_file: Some(mask_file),
            });
            let bias_name = format!("{}.bias", layer.name);
            let file = format!("{bias_name}.bin");
            write(&file, &encode(b.data()))?;
            tensors.push(TensorEntry {
                name: bias_name,
                shape: b.shape().to_vec(),
                dtype: dtype.clone(),
                file,
                mask_file: None,
            });
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        arch_id: arch,
        class_count: model.class_count,
        input_shape: model.input_shape.clone(),
        dtype,
        lineage,
        tensors,
    };
    write(MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptCheckpoint {
        tensor: MANIFEST_FILE.into(),
        detail: e.to_string(),
    })
}

fn read_payload(dir: &Path, entry: &TensorEntry, file: &str, width: usize) -> Result<Vec<u8>> {
    let p = dir.join(file);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let numel: usize = entry.shape.iter().product();
    if bytes.len() != numel * width {
        return Err(Error::CorruptCheckpoint {
            tensor: entry.name.clone(),
            detail: format!("{file}: expected {} bytes, found {}", numel * width, bytes.len()),
        });
    }
    Ok(bytes)
}

/// Load a checkpoint written by [`save`] into a fresh model of the recorded
/// architecture.
pub fn load<T: Real>(dir: &Path) -> Result<ModelGraph<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint {
            tensor: MANIFEST_FILE.into(),
            detail: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let expected = T::PRECISION.dtype();
    let mut model = ModelGraph::<T>::build(manifest.arch_id, manifest.class_count)?;
    if model.input_shape != manifest.input_shape {
        return Err(Error::CorruptCheckpoint {
            tensor: MANIFEST_FILE.into(),
            detail: format!("input shape {:?} != {:?}", manifest.input_shape, model.input_shape),
        });
    }
    let width = T::PRECISION.byte_width();
    let mut seen = 0usize;
    for entry in &manifest.tensors {
        if entry.dtype != expected {
            return Err(Error::DtypeMismatch {
                tensor: entry.name.clone(),
                found: entry.dtype.clone(),
                expected: expected.into(),
            });
        }
        let bytes = read_payload(dir, entry, &entry.file, width)?;
        let values: Vec<T> = bytes.chunks_exact(width).map(T::read_le).collect();
        let mask = match &entry.mask_file {
            Some(f) => {
                let raw = read_payload(dir, entry, f, 1)?;
                if let Some(b) = raw.iter().find(|&&b| b > 1) {
                    return Err(Error::CorruptCheckpoint {
                        tensor: entry.name.clone(),
                        detail: format!("mask byte {b} is not 0/1"),
                    });
                }
                Some(raw.into_iter().map(|b| b == 1).collect::<Vec<_>>())
            }
            None => None,
        };
        let slot = find_tensor(&mut model, &entry.name).ok_or_else(|| Error::CorruptCheckpoint {
            tensor: entry.name.clone(),
            detail: format!("no such tensor in {}", manifest.arch_id),
        })?;
        let shape_err = |found: &[usize]| Error::CorruptCheckpoint {
            tensor: entry.name.clone(),
            detail: format!("shape {:?} != architecture shape {found:?}", entry.shape),
        };
        match (slot, mask) {
            (Slot::Weight(p), Some(m)) => {
                if p.shape() != entry.shape.as_slice() {
                    return Err(shape_err(p.shape()));
                }
                p.weights.data_mut().copy_from_slice(&values);
                p.restore_mask(m);
            }
            (Slot::Bias(b), None) => {
                if b.shape() != entry.shape.as_slice() {
                    return Err(shape_err(b.shape()));
                }
                b.data_mut().copy_from_slice(&values);
            }
            _ => {
                return Err(Error::CorruptCheckpoint {
                    tensor: entry.name.clone(),
                    detail: "mask presence does not match tensor kind".into(),
                })
            }
        }
        seen += 1;
    }
    let expected_count = model.params().count() * 2;
    if seen != expected_count {
        return Err(Error::CorruptCheckpoint {
            tensor: MANIFEST_FILE.into(),
            detail: format!("manifest lists {seen} tensors, architecture has {expected_count}"),
        });
    }
    Ok(model)
}

enum Slot<'a, T> {
    Weight(&'a mut ParamTensor<T>),
    Bias(&'a mut Tensor<T>),
}

fn find_tensor<'a, T: Real>(model: &'a mut ModelGraph<T>, name: &str) -> Option<Slot<'a, T>> {
    for layer in &mut model.layers {
        let bias_name = format!("{}.bias", layer.name);
        if let Some((w, b)) = layer.params_mut() {
            if w.name == name {
                return Some(Slot::Weight(w));
            }
            if bias_name == name {
                return Some(Slot::Bias(b));
            }
        }
    }
    None
}

/// Content hash of a checkpoint's payloads (hex, 16 chars). Identifies the
/// initial model in run fingerprints.
pub fn checkpoint_id(dir: &Path) -> Result<String> {
    let manifest = read_manifest(dir)?;
    let mut h = Sha256::new();
    h.update(manifest.arch_id.as_str().as_bytes());
    h.update(manifest.dtype.as_bytes());
    for e in &manifest.tensors {
        h.update(e.name.as_bytes());
        for f in std::iter::once(&e.file).chain(e.mask_file.as_ref()) {
            let p = dir.join(f);
            h.update(fs::read(&p).map_err(|err| Error::io(&p, err))?);
        }
    }
    Ok(hex::encode(&h.finalize()[..8]))
}
