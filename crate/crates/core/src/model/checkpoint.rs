//! Binary checkpoint container.
//!
//! ```text
//! offset 0   "EMFC"                      magic
//! offset 4   u16 LE                      format version (1)
//! offset 6   u32 LE                      header length H in bytes
//! offset 10  H bytes of UTF-8 JSON       CheckpointHeader
//! offset 10+H                            tensor data, f64 little-endian
//! ```
//!
//! Tensor `offset`s in the header are byte offsets from the start of the
//! data section; each tensor is `rows * cols` row-major values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnyModel, Architecture, ModelError, ModelKind};
use crate::nn::{Differentiable, Matrix};

pub const MAGIC: &[u8; 4] = b"EMFC";
pub const FORMAT_VERSION: u16 = 1;
pub const FLATTEN_ORDER: &str = "row-major [N x D], patch-major";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an EMFC checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (this build reads {FORMAT_VERSION})")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset within the data section.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: ModelKind,
    pub architecture: Architecture,
    pub flatten_order: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (run config, normalization statistics).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// A model plus whatever metadata travelled with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub metadata: Option<serde_json::Value>,
}

pub fn encode(model: &AnyModel, metadata: Option<serde_json::Value>) -> Vec<u8> {
    let params = model.params();
    let mut offset = 0;
    let tensors = model
        .tensor_names()
        .into_iter()
        .zip(&params)
        .map(|(name, p)| {
            let e = TensorEntry {
                name,
                rows: p.rows(),
                cols: p.cols(),
                offset,
            };
            offset += p.len() * 8;
            e
        })
        .collect();
    let header = CheckpointHeader {
        model_kind: model.kind(),
        architecture: model.architecture(),
        flatten_order: FLATTEN_ORDER.into(),
        tensors,
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in p.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(CheckpointError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let data_start = 10usize.checked_add(hlen).ok_or(CheckpointError::Truncated)?;
    if bytes.len() < data_start {
        return Err(CheckpointError::Truncated);
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[10..data_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.architecture.kind() != header.model_kind {
        return Err(CheckpointError::Header(format!(
            "model_kind {} disagrees with architecture {}",
            header.model_kind,
            header.architecture.kind()
        )));
    }
    let data = &bytes[data_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let end = t.offset + n * 8;
        if end > data.len() {
            return Err(CheckpointError::Truncated);
        }
        let vals = data[t.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Matrix::from_vec(t.rows, t.cols, vals).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if !m.is_finite() {
            return Err(CheckpointError::Header(format!("tensor {} holds non-finite values", t.name)));
        }
        tensors.push(m);
    }
    let model = AnyModel::from_tensors(&header.architecture, tensors)?;
    let names = model.tensor_names();
    if names.iter().ne(header.tensors.iter().map(|t| &t.name)) {
        return Err(CheckpointError::Header("tensor names do not match the architecture".into()));
    }
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
    })
}

pub fn save(path: &Path, model: &AnyModel, metadata: Option<serde_json::Value>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(model, metadata)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmfConfig;

    fn archs() -> Vec<Architecture> {
        vec![
            Architecture::Emforecaster(EmfConfig {
                lookback: 16,
                horizon: 4,
                patch_len: 4,
                stride: 2,
                embed_dim: 3,
                hidden_dim: 5,
                blocks: 2,
                activation: Default::default(),
            }),
            Architecture::Dlinear {
                lookback: 16,
                horizon: 4,
                half_window: 3,
            },
            Architecture::Mlp {
                lookback: 16,
                horizon: 4,
                hidden: vec![7, 6],
            },
            Architecture::Persistence {
                lookback: 16,
                horizon: 4,
            },
        ]
    }

    #[test]
    fn roundtrip_every_kind() {
        for arch in archs() {
            let m = AnyModel::build(&arch, 42).unwrap();
            let meta = serde_json::json!({"dataset": "x"});
            let back = decode(&encode(&m, Some(meta.clone()))).unwrap();
            assert_eq!(back.model, m);
            assert_eq!(back.metadata, Some(meta));
        }
    }

    #[test]
    fn layout_is_as_documented() {
        let m = AnyModel::build(&archs()[1], 1).unwrap();
        let bytes = encode(&m, None);
        assert_eq!(&bytes[..4], b"EMFC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + hlen]).unwrap();
        assert_eq!(header["model_kind"], "dlinear");
        assert_eq!(header["tensors"][1]["offset"], 16 * 4 * 8);
        let first = f64::from_le_bytes(bytes[10 + hlen..18 + hlen].try_into().unwrap());
        assert_eq!(first, m.params()[0].get(0, 0));
        assert_eq!(bytes.len(), 10 + hlen + 2 * 16 * 4 * 8);
    }

    #[test]
    fn rejects_bad_input() {
        let m = AnyModel::build(&archs()[0], 1).unwrap();
        let mut bytes = encode(&m, None);
        assert!(matches!(decode(b"NOPE0000000"), Err(CheckpointError::BadMagic)));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
    }
}
