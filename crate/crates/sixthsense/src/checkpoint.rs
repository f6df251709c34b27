//! Binary checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "SIXSENSE"
//! 8       4     format version, u32 little endian (currently 1)
//! 12      4     header length H, u32 little endian
//! 16      H     UTF-8 JSON header: model config, tensor table, metadata
//! 16+H    8·N   N parameters, f64 little endian, in tensor-table order
//! ```
//!
//! The tensor table lists `name`, `offset` (in parameters), `shape`; the
//! tensors tile the parameter vector without gaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sixthsense_core::model::{ModelConfig, ModelParams};

use crate::error::{io_err, Error, Result};

pub const MAGIC: &[u8; 8] = b"SIXSENSE";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    param_count: usize,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

pub fn encode(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let tensors = params
        .layout
        .tensors(&params.config)
        .into_iter()
        .map(|(name, (start, _), shape)| TensorEntry { name, offset: start, shape })
        .collect();
    let header = Header { model: params.config.clone(), param_count: params.data.len(), tensors, meta: meta.clone() };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &params.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bad = |message: &str| Error::Format { path: path.into(), message: message.into() };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version { path: path.into(), found: version, expected: VERSION });
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|source| Error::Parse { path: path.into(), line: 1, source })?;
    let data_bytes = &bytes[16 + hlen..];
    if data_bytes.len() != 8 * header.param_count {
        return Err(bad("parameter block has the wrong length"));
    }
    let data: Vec<f64> = data_bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let params = ModelParams::from_data(header.model, data)?;
    let expected: Vec<(String, usize)> =
        params.layout.tensors(&params.config).into_iter().map(|(n, (s, _), _)| (n, s)).collect();
    let found: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.offset)).collect();
    if expected != found {
        return Err(bad("tensor table does not match the model config"));
    }
    Ok((params, header.meta))
}

pub fn save(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode(params, meta)?).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sixthsense_core::model::init_params;

    #[test]
    fn round_trip() {
        let p = init_params(&ModelConfig::new(30), 5).unwrap();
        let meta = CheckpointMeta { label: "history".into(), seed: 5, epoch: 3, val_loss: Some(0.125) };
        let bytes = encode(&p, &meta).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (q, m) = decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(q, p);
        assert_eq!(m, meta);
        assert_eq!(bytes.len() % 8, (16 + u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize) % 8);
    }

    #[test]
    fn rejects_damage() {
        let p = init_params(&ModelConfig::new(1), 5).unwrap();
        let bytes = encode(&p, &CheckpointMeta::default()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8], Path::new("x")).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode(&wrong, Path::new("x")).is_err());
        let mut newer = bytes.clone();
        newer[8] = 2;
        assert!(matches!(decode(&newer, Path::new("x")), Err(Error::Version { found: 2, .. })));
    }
}
