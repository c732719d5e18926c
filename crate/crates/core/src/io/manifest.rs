//! JSON model manifest paired with a CGMB weight blob.
//!
//! The manifest carries the graph description and a weight table that must
//! agree with the blob's own table. Floats are stored as f32, so models built
//! at another precision are converted on save.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blob::{read_blob, write_blob, BlobEntry};
use crate::error::{Error, Result};
use crate::graph::{CgmGraph, ModelDescription};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    /// Blob file name, resolved relative to the manifest.
    pub file: String,
    pub bytes: u64,
    /// CRC-32 of the whole blob file, hex.
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelDescription,
    pub weights: Vec<BlobEntry>,
    pub blob: BlobRef,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // Check the version before the schema so old files get a clear error.
        let found = value.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == MANIFEST_VERSION as u64 => {}
            Some(v) => return Err(Error::Version { expected: MANIFEST_VERSION, found: v as u32 }),
            None => return Err(Error::Validation("manifest has no format_version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Writes `g` as a manifest plus blob. Saving the same weights twice gives
/// byte-identical files.
pub fn save_model<T: Scalar>(g: &CgmGraph<T>, manifest_path: &Path, blob_path: &Path) -> Result<Manifest> {
    let weights: BTreeMap<String, Tensor<f32>> = g
        .weights()
        .iter()
        .map(|(k, t)| {
            let data = t.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
            Tensor::new(t.shape().to_vec(), data).map(|t| (k.clone(), t))
        })
        .collect::<Result<_>>()?;
    let (bytes, entries) = write_blob(&weights);
    fs::write(blob_path, &bytes)?;
    let file = blob_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("blob path {} has no file name", blob_path.display())))?
        .to_string();
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        model: g.description().clone(),
        weights: entries,
        blob: BlobRef { file, bytes: bytes.len() as u64, crc32: format!("{:08x}", crc32fast::hash(&bytes)) },
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path, text)?;
    Ok(manifest)
}

/// Loads and validates a model from explicit manifest and blob paths.
pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<CgmGraph<f32>> {
    let manifest = Manifest::read(manifest_path)?;
    let bytes = fs::read(blob_path)?;
    from_parts(manifest, &bytes)
}

/// Loads a model, finding the blob through the manifest's `blob.file`.
pub fn load_model_from_manifest(manifest_path: &Path) -> Result<CgmGraph<f32>> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let bytes = fs::read(dir.join(&manifest.blob.file))?;
    from_parts(manifest, &bytes)
}

fn from_parts(manifest: Manifest, bytes: &[u8]) -> Result<CgmGraph<f32>> {
    let (entries, tensors) = read_blob(bytes)?;
    if bytes.len() as u64 != manifest.blob.bytes {
        return Err(Error::Checksum(format!(
            "blob has {} bytes, manifest records {}",
            bytes.len(),
            manifest.blob.bytes
        )));
    }
    let crc = format!("{:08x}", crc32fast::hash(bytes));
    if !crc.eq_ignore_ascii_case(&manifest.blob.crc32) {
        return Err(Error::Checksum(format!("blob CRC-32 {crc} does not match manifest {}", manifest.blob.crc32)));
    }
    let by_name: BTreeMap<&str, &BlobEntry> = entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for declared in &manifest.weights {
        match by_name.get(declared.name.as_str()) {
            None => return Err(Error::MissingWeight(declared.name.clone())),
            Some(actual) if *actual != declared => {
                return Err(Error::Shape(format!(
                    "weight `{}`: manifest says {:?} at {}, blob has {:?} at {}",
                    declared.name, declared.shape, declared.offset, actual.shape, actual.offset
                )))
            }
            Some(_) => {}
        }
    }
    if manifest.weights.len() != entries.len() {
        return Err(Error::Shape(format!(
            "manifest lists {} weights, blob holds {}",
            manifest.weights.len(),
            entries.len()
        )));
    }
    for node in &manifest.model.nodes {
        for name in node.params.values() {
            if !tensors.contains_key(name) {
                return Err(Error::MissingWeight(name.clone()));
            }
        }
    }
    CgmGraph::build(manifest.model, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::toy_linear;

    #[test]
    fn round_trip_and_resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = (dir.path().join("m.json"), dir.path().join("m.cgmb"));
        let g = toy_linear::<f32>();
        save_model(&g, &m, &b).unwrap();
        let loaded = load_model(&m, &b).unwrap();
        assert_eq!(loaded.description(), g.description());
        assert_eq!(loaded.weights(), g.weights());
        let first = fs::read(&b).unwrap();
        let (m2, b2) = (dir.path().join("n.json"), dir.path().join("n.cgmb"));
        save_model(&loaded, &m2, &b2).unwrap();
        assert_eq!(first, fs::read(&b2).unwrap());
        assert!(load_model_from_manifest(&m).is_ok());
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = (dir.path().join("m.json"), dir.path().join("m.cgmb"));
        save_model(&toy_linear::<f32>(), &m, &b).unwrap();
        let text = fs::read_to_string(&m).unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        fs::write(&m, text).unwrap();
        assert!(matches!(load_model(&m, &b), Err(Error::Version { expected: 1, found: 7 })));
    }

    #[test]
    fn missing_weight_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = (dir.path().join("m.json"), dir.path().join("m.cgmb"));
        let g = toy_linear::<f32>();
        let mut weights = g.weights().clone();
        let dropped = weights.keys().next().unwrap().clone();
        weights.remove(&dropped);
        let (bytes, entries) = write_blob(&weights);
        fs::write(&b, &bytes).unwrap();
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            model: g.description().clone(),
            weights: entries,
            blob: BlobRef { file: "m.cgmb".into(), bytes: bytes.len() as u64, crc32: format!("{:08x}", crc32fast::hash(&bytes)) },
        };
        fs::write(&m, serde_json::to_string(&manifest).unwrap()).unwrap();
        match load_model(&m, &b) {
            Err(Error::MissingWeight(name)) => assert_eq!(name, dropped),
            other => panic!("expected missing weight, got {other:?}"),
        }
    }

    #[test]
    fn shape_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (m, b) = (dir.path().join("m.json"), dir.path().join("m.cgmb"));
        let mut manifest = save_model(&toy_linear::<f32>(), &m, &b).unwrap();
        manifest.weights[0].shape.push(1);
        fs::write(&m, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(matches!(load_model(&m, &b), Err(Error::Shape(_))));
    }
}
