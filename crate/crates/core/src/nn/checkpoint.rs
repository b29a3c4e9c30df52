//! Single-file model archive.
//!
//! Layout: the magic bytes, a little-endian `u64` manifest length, the JSON
//! manifest, then every parameter as little-endian `f32` in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamData;
use super::vocab::Vocab;
use crate::error::{ApeError, Result};

pub const MAGIC: &[u8; 8] = b"TAPECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// `"mst"` or `"levt"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab: Vocab,
    pub bpe_merges: Option<Vec<(String, String)>>,
    pub train_steps: usize,
    pub tensors: Vec<TensorMeta>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, manifest: &CheckpointManifest, params: &[ParamData]) -> Result<()> {
    let path = path.as_ref();
    let meta: Vec<TensorMeta> = params
        .iter()
        .map(|(n, s, _)| TensorMeta {
            name: n.clone(),
            shape: s.clone(),
        })
        .collect();
    let manifest = CheckpointManifest {
        tensors: meta,
        ..manifest.clone()
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::with_capacity(16 + json.len() + params.iter().map(|p| p.2.len() * 4).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, data) in params {
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| ApeError::io(path, e))?;
    f.write_all(&buf).map_err(|e| ApeError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointManifest, Vec<ParamData>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ApeError::io(path, e))?;
    let bad = |m: &str| ApeError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + n).ok_or_else(|| bad("truncated manifest"))?;
    let value: serde_json::Value = serde_json::from_slice(json)?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(bad(&format!(
            "format version {version:?} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let manifest: CheckpointManifest = serde_json::from_value(value)?;
    manifest.vocab.validate()?;
    let mut offset = 16 + n;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let count: usize = t.shape.iter().product();
        let raw = bytes
            .get(offset..offset + count * 4)
            .ok_or_else(|| bad("truncated parameter data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push((t.name.clone(), t.shape.clone(), data));
        offset += count * 4;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    Ok((manifest, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn manifest() -> CheckpointManifest {
        CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: "mst".into(),
            config: serde_json::json!({"d_model": 8}),
            vocab: Vocab::build([&Sentence::from_text("a b")]),
            bpe_merges: None,
            train_steps: 3,
            tensors: vec![],
        }
    }

    #[test]
    fn roundtrip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let params = vec![("w".to_string(), vec![2, 2], vec![1.0, -2.0, 3.5, 0.0])];
        save_checkpoint(&p, &manifest(), &params).unwrap();
        let (m, back) = load_checkpoint(&p).unwrap();
        assert_eq!(back, params);
        assert_eq!(m.kind, "mst");

        let mut bad = manifest();
        bad.format_version = 99;
        save_checkpoint(&p, &bad, &params).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("format version"), "{err}");

        fs::write(&p, b"garbage").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
