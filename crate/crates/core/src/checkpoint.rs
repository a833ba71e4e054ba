//! Binary model container.
//!
//! Layout: the 8-byte magic `GVAECKP1`, a little-endian `u64` header length,
//! a JSON header (architecture, free-form metadata, tensor manifest with
//! byte offsets relative to the data section), then every tensor as raw
//! little-endian `f64`. Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GraphVae, ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"GVAECKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Serializes a model with arbitrary JSON metadata.
pub fn to_bytes(model: &GraphVae, meta: &serde_json::Value) -> Result<Vec<u8>, CheckpointError> {
    let store = model.params();
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    let groups = [
        (Kind::Param, store.names(), store.values()),
        (Kind::Buffer, store.buffer_names(), store.buffers()),
    ];
    for (kind, names, values) in groups {
        for (name, t) in names.iter().zip(values) {
            tensors.push(Entry {
                name: name.clone(),
                kind,
                shape: t.shape().to_vec(),
                offset: data.len() as u64,
            });
            for x in t.data() {
                data.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

/// Rebuilds the model and returns it with the stored metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(GraphVae, serde_json::Value), CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..data_start])?;
    let data = &bytes[data_start..];

    // seed is irrelevant: every tensor is overwritten below
    let mut model = GraphVae::new(header.config, 0)?;
    let store = model.params_mut();
    let expected = store.names().len() + store.buffer_names().len();
    if header.tensors.len() != expected {
        return Err(CheckpointError::Corrupt(format!(
            "{} tensors stored, architecture has {expected}",
            header.tensors.len()
        )));
    }
    let mut seen = vec![false; expected];
    for e in &header.tensors {
        let (names, slot_base) = match e.kind {
            Kind::Param => (store.names(), 0),
            Kind::Buffer => (store.buffer_names(), store.names().len()),
        };
        let idx = names
            .iter()
            .position(|n| *n == e.name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown tensor {}", e.name)))?;
        if std::mem::replace(&mut seen[slot_base + idx], true) {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {}", e.name)));
        }
        let target = match e.kind {
            Kind::Param => &mut store.values_mut()[idx],
            Kind::Buffer => &mut store.buffers_mut()[idx],
        };
        if target.shape() != e.shape.as_slice() {
            return Err(CheckpointError::Corrupt(format!(
                "{} has shape {:?}, architecture expects {:?}",
                e.name,
                e.shape,
                target.shape()
            )));
        }
        let start = e.offset as usize;
        let end = start + 8 * target.len();
        if end > data.len() {
            return Err(CheckpointError::Corrupt(format!("{} runs past the data section", e.name)));
        }
        for (dst, chunk) in target.data_mut().iter_mut().zip(data[start..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    Ok((model, header.meta))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn save(model: &GraphVae, meta: &serde_json::Value, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &to_bytes(model, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(GraphVae, serde_json::Value), CheckpointError> {
    from_bytes(&fs::read(path)?)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> ModelConfig {
        ModelConfig {
            k: 4,
            latent_dim: 3,
            conv_channels: vec![5, 6],
            pooling_hidden: 7,
            decoder_hidden: vec![8],
            conditional: true,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = GraphVae::new(small(), 42).unwrap();
        // awkward values survive: subnormal, negative zero, extremes
        let v = m.params_mut().values_mut();
        v[0].data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        v[0].data_mut()[1] = -0.0;
        v[1].data_mut()[0] = f64::MAX;
        m.params_mut().buffers_mut()[0].data_mut()[0] = 1.0 / 3.0;
        let meta = serde_json::json!({"epoch": 3});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&m, &meta, &path).unwrap();
        let (back, meta_back) = load(&path).unwrap();
        assert_eq!(meta, meta_back);
        assert_eq!(back.config(), m.config());
        let bits = |g: &GraphVae| -> Vec<u64> {
            g.params()
                .values()
                .iter()
                .chain(g.params().buffers())
                .flat_map(|t| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(to_bytes(&m, &meta).unwrap(), to_bytes(&back, &meta).unwrap());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = GraphVae::new(small(), 1).unwrap();
        let bytes = to_bytes(&m, &serde_json::Value::Null).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(from_bytes(b"nope").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
