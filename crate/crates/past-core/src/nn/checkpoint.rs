//! Single-file checkpoint archive: JSON metadata (kind, arch descriptor,
//! tensor directory) followed by raw little-endian f32 tensor data.

use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"PASTCKPT";
const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    kind: String,
    arch: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: ArrayD<f32>,
}

pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    arch: &impl Serialize,
    tensors: &[NamedTensor],
) -> Result<()> {
    let meta = Meta {
        kind: kind.to_string(),
        arch: serde_json::to_value(arch).expect("arch serializes"),
        tensors: tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.value.shape().to_vec(),
            })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta).expect("meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    for t in tensors {
        for &v in t.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.to_string_lossy(), e))?;
    f.write_all(&out)
        .map_err(|e| Error::io(path.to_string_lossy(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(String, serde_json::Value, Vec<NamedTensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.to_string_lossy(), e))?;
    let bad = |reason: &str| Error::MalformedHeader {
        path: path.to_string_lossy().into_owned(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 9 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive"));
    }
    if bytes[8] != VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let meta_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
    if bytes.len() < 17 + meta_len {
        return Err(bad("truncated metadata"));
    }
    let meta: Meta =
        serde_json::from_slice(&bytes[17..17 + meta_len]).map_err(|e| Error::MalformedHeader {
            path: path.to_string_lossy().into_owned(),
            reason: e.to_string(),
        })?;
    let mut offset = 17 + meta_len;
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for entry in &meta.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset + n * 4;
        if bytes.len() < end {
            return Err(Error::PayloadMismatch {
                path: path.to_string_lossy().into_owned(),
                expected: end,
                actual: bytes.len(),
            });
        }
        let data: Vec<f32> = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        tensors.push(NamedTensor {
            name: entry.name.clone(),
            value: ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                .map_err(|e| bad(&format!("tensor shape error: {e}")))?,
        });
    }
    Ok((meta.kind, meta.arch, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let tensors = vec![
            NamedTensor {
                name: "w".into(),
                value: ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1., 2., 3., 4., 5., 6.])
                    .unwrap(),
            },
            NamedTensor {
                name: "b".into(),
                value: ArrayD::from_elem(IxDyn(&[3]), -0.5),
            },
        ];
        let arch = serde_json::json!({"depth": 3, "width": 16});
        save_checkpoint(&path, "test", &arch, &tensors).unwrap();
        let (kind, arch2, back) = load_checkpoint(&path).unwrap();
        assert_eq!(kind, "test");
        assert_eq!(arch, arch2);
        assert_eq!(tensors, back);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let tensors = vec![NamedTensor {
            name: "w".into(),
            value: ArrayD::from_elem(IxDyn(&[8]), 1.0),
        }];
        save_checkpoint(&path, "test", &serde_json::json!({}), &tensors).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::PayloadMismatch { .. })
        ));
    }
}
