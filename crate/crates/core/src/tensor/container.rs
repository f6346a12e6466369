//! Tensor container: a JSON manifest naming each tensor's dtype, shape and
//! byte range, plus a companion blob of little-endian `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Tensor, TensorError};

pub const FORMAT: &str = "drama-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unsupported container {format:?} version {version} (expected {FORMAT:?} v{VERSION})")]
    Version { format: String, version: u32 },
    #[error("tensor {name:?}: unsupported dtype {dtype:?}")]
    DType { name: String, dtype: String },
    #[error("tensor {name:?}: byte range {offset}+{length} exceeds blob of {available} bytes")]
    Truncated { name: String, offset: u64, length: u64, available: u64 },
    #[error("tensor {name:?}: {source}")]
    Tensor { name: String, source: TensorError },
    #[error("tensor {0:?} not present")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub entries: Vec<Entry>,
}

/// Named tensors in manifest order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet {
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }
}

/// Serialize tensors into a manifest and blob bytes.
pub fn encode(set: &TensorSet, blob_name: &str) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(set.tensors.len());
    for (name, t) in &set.tensors {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: name.clone(),
            dtype: "f64".into(),
            shape: t.shape().to_vec(),
            offset,
            length: (t.len() * 8) as u64,
        });
    }
    let manifest = Manifest { format: FORMAT.into(), version: VERSION, blob: blob_name.into(), entries };
    (manifest, blob)
}

/// Decode every entry; fails as a whole on the first bad entry.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<TensorSet, ContainerError> {
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(ContainerError::Version { format: manifest.format.clone(), version: manifest.version });
    }
    let mut set = TensorSet::default();
    for e in &manifest.entries {
        if e.dtype != "f64" {
            return Err(ContainerError::DType { name: e.name.clone(), dtype: e.dtype.clone() });
        }
        let end = e.offset.checked_add(e.length);
        if end.is_none_or(|end| end > blob.len() as u64) || e.length % 8 != 0 {
            return Err(ContainerError::Truncated {
                name: e.name.clone(),
                offset: e.offset,
                length: e.length,
                available: blob.len() as u64,
            });
        }
        let bytes = &blob[e.offset as usize..(e.offset + e.length) as usize];
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|source| ContainerError::Tensor { name: e.name.clone(), source })?;
        set.push(e.name.clone(), t);
    }
    Ok(set)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ContainerError + '_ {
    move |source| ContainerError::Io { path: path.to_path_buf(), source }
}

/// Write `<manifest_path>` and its blob `<manifest stem>.bin` next to it.
pub fn write(manifest_path: &Path, set: &TensorSet) -> Result<(), ContainerError> {
    let blob_path = manifest_path.with_extension("bin");
    let blob_name = blob_path.file_name().and_then(|n| n.to_str()).unwrap_or("tensors.bin").to_string();
    let (manifest, blob) = encode(set, &blob_name);
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|source| ContainerError::Json { path: manifest_path.to_path_buf(), source })?;
    fs::write(manifest_path, json).map_err(io_err(manifest_path))
}

pub fn read(manifest_path: &Path) -> Result<TensorSet, ContainerError> {
    let text = fs::read(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|source| ContainerError::Json { path: manifest_path.to_path_buf(), source })?;
    let blob_path = manifest_path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    decode(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn sample() -> TensorSet {
        let mut s = TensorSet::default();
        s.push("a", Tensor::randn(&[3, 4], 1.0, Seed(1)));
        s.push("b", Tensor::new(vec![2], vec![-0.0, 1e-300]).unwrap());
        s.push("empty", Tensor::zeros(&[0, 5]));
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        let set = sample();
        write(&p, &set).unwrap();
        let back = read(&p).unwrap();
        assert_eq!(back.tensors.len(), 3);
        for ((na, a), (nb, b)) in set.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let (m, blob) = encode(&sample(), "x.bin");
        let err = decode(&m, &blob[..blob.len() - 3]).unwrap_err();
        assert!(matches!(err, ContainerError::Truncated { ref name, .. } if name == "b"), "{err}");
    }

    #[test]
    fn version_and_dtype_checked() {
        let (mut m, blob) = encode(&sample(), "x.bin");
        m.entries[0].dtype = "f32".into();
        assert!(matches!(decode(&m, &blob), Err(ContainerError::DType { .. })));
        m.version = 99;
        assert!(matches!(decode(&m, &blob), Err(ContainerError::Version { .. })));
    }
}
