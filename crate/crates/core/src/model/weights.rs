//! Weight files: `DISQ1`, a u32 little-endian header length, a JSON header
//! with the config and the ordered tensor manifest, then every tensor as
//! little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{zero_model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Parameters;

pub const WEIGHTS_MAGIC: &[u8; 5] = b"DISQ1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn encode_weights(params: &ModelParams) -> Result<Vec<u8>> {
    let header = Header {
        config: params.config.clone(),
        tensors: params
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = WEIGHTS_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &v in t.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a weight file from the front of `bytes`; returns the model and
/// the number of bytes consumed.
pub fn decode_weights(bytes: &[u8]) -> Result<(ModelParams, usize)> {
    let bad = |m: &str| Error::WeightFormat(m.to_string());
    if !bytes.starts_with(WEIGHTS_MAGIC) {
        return Err(bad("missing DISQ1 magic"));
    }
    let mut pos = WEIGHTS_MAGIC.len();
    let len_bytes: [u8; 4] = bytes
        .get(pos..pos + 4)
        .ok_or_else(|| bad("truncated header length"))?
        .try_into()
        .expect("4 bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    pos += 4;
    let json = bytes
        .get(pos..pos + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    pos += header_len;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::WeightFormat(format!("header: {e}")))?;

    let mut params = zero_model(&header.config)?;
    let expected = params.tensor_shapes();
    if expected.len() != header.tensors.len() {
        return Err(Error::WeightFormat(format!(
            "{} tensors listed, config implies {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::WeightFormat(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
    }
    for t in params.tensors_mut() {
        let need = t.values.len() * 4;
        let raw = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::WeightFormat(format!("truncated data for {}", t.name)))?;
        for (v, chunk) in t.values.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
        pos += need;
    }
    Ok((params, pos))
}

pub fn save_weights(path: &Path, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_weights(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn small() -> ModelConfig {
        ModelConfig {
            width_c: 8,
            head_units: vec![4, 3, 2, 1],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let m = build_model(&small(), 5).unwrap();
        let bytes = encode_weights(&m).unwrap();
        let (back, used) = decode_weights(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back.config, m.config);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.values.iter().zip(b.values) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        // re-encoding the f32 values is stable
        assert_eq!(encode_weights(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = build_model(&small(), 5).unwrap();
        let bytes = encode_weights(&m).unwrap();
        assert!(decode_weights(b"DISQ2xxxx").is_err());
        assert!(decode_weights(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let m = build_model(&small(), 5).unwrap();
        let bytes = encode_weights(&m).unwrap();
        let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[9..9 + len]).unwrap();
        // same length edit: first conv 3->1 becomes 3->2 in the manifest
        let edited = json.replacen("[3,3,3,1]", "[3,3,3,2]", 1);
        assert_ne!(edited, json);
        let mut out = bytes[..9].to_vec();
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[9 + len..]);
        let err = decode_weights(&out).unwrap_err();
        assert!(matches!(err, Error::WeightFormat(_)), "{err}");
    }
}
