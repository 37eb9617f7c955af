//! Self-describing weights container.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, JSON header,
//! little-endian `f32` parameter data, then the SHA-256 of everything before
//! it. The hex digest doubles as the model id.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FactorVae, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"FAVAEWT\0";
pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
    /// Offset in f32 elements from the start of the data section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    model: ModelConfig,
    blocks: Vec<Block>,
    metadata: serde_json::Value,
    dim_labels: Option<Vec<String>>,
}

/// Everything in a weights file besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsInfo {
    pub checksum: String,
    pub metadata: serde_json::Value,
    pub dim_labels: Option<Vec<String>>,
}

pub fn encode_weights<T: Scalar>(
    model: &FactorVae<T>,
    metadata: &serde_json::Value,
    dim_labels: Option<&[String]>,
) -> Result<(Vec<u8>, String)> {
    let mut blocks = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    for p in model.vae.iter().chain(model.disc.iter()) {
        blocks.push(Block {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        for v in p.value.data() {
            data.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        offset += p.value.len();
    }
    let header = Header {
        schema_version: WEIGHTS_SCHEMA_VERSION,
        model: model.config().clone(),
        blocks,
        metadata: metadata.clone(),
        dim_labels: dim_labels.map(|l| l.to_vec()),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + data.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok((out, hex::encode(digest)))
}

pub fn decode_weights(bytes: &[u8]) -> Result<(FactorVae<f32>, WeightsInfo)> {
    let bad = |m: &str| Error::Weights(m.to_string());
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a weights file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(bad("checksum mismatch"));
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = body
        .get(12..12 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Weights(format!("bad header: {e}")))?;
    if header.schema_version != WEIGHTS_SCHEMA_VERSION {
        return Err(Error::Weights(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    let data = &body[12 + hlen..];
    let mut model = FactorVae::<f32>::new(header.model, 0)?;
    let expected = model.vae.len() + model.disc.len();
    if header.blocks.len() != expected {
        return Err(Error::Weights(format!(
            "file has {} blocks, model has {expected}",
            header.blocks.len()
        )));
    }
    for b in &header.blocks {
        let n: usize = b.shape.iter().product();
        let bytes = data.get(b.offset * 4..(b.offset + n) * 4).ok_or_else(|| {
            Error::Weights(format!("block `{}` runs past the data section", b.name))
        })?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&b.shape, values)
            .map_err(|e| Error::Weights(format!("block `{}`: {e}", b.name)))?;
        if b.name.starts_with("disc.") {
            model.disc.set(&b.name, t)?;
        } else {
            model.vae.set(&b.name, t)?;
        }
    }
    let info = WeightsInfo {
        checksum: hex::encode(digest),
        metadata: header.metadata,
        dim_labels: header.dim_labels,
    };
    Ok((model, info))
}

/// Write atomically; returns the checksum.
pub fn save_weights<T: Scalar>(
    path: &Path,
    model: &FactorVae<T>,
    metadata: &serde_json::Value,
    dim_labels: Option<&[String]>,
) -> Result<String> {
    let (bytes, checksum) = encode_weights(model, metadata, dim_labels)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(checksum)
}

pub fn load_weights(path: &Path) -> Result<(FactorVae<f32>, WeightsInfo)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FactorVae<f32> {
        let cfg = ModelConfig {
            image_resolution: 32,
            encoder_channels: vec![4, 4, 4, 4],
            encoder_hidden: 8,
            decoder_hidden: 8,
            decoder_channels: vec![4, 4, 4, 4, 4],
            discriminator_width: 8,
            discriminator_depth: 2,
            ..ModelConfig::default()
        };
        FactorVae::new(cfg, 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let meta = serde_json::json!({"epochs": 3});
        let labels = vec!["a".to_string(); 6];
        let (bytes, id) = encode_weights(&m, &meta, Some(&labels)).unwrap();
        let (back, info) = decode_weights(&bytes).unwrap();
        assert_eq!(info.checksum, id);
        assert_eq!(info.metadata, meta);
        assert_eq!(info.dim_labels, Some(labels));
        assert_eq!(back.vae, m.vae);
        assert_eq!(back.disc, m.disc);
    }

    #[test]
    fn corruption_is_rejected() {
        let (mut bytes, _) = encode_weights(&tiny(), &serde_json::Value::Null, None).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_weights(&bytes), Err(Error::Weights(m)) if m.contains("checksum")));
        assert!(decode_weights(b"garbage").is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = tiny();
        let (bytes, _) = encode_weights(&m, &serde_json::Value::Null, None).unwrap();
        // Rewrite the header so the first block claims a different shape,
        // then re-sign so only the shape check can fail.
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut header: Header = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        let s = header.blocks[0].shape.clone();
        header.blocks[0].shape = vec![s.iter().product::<usize>()];
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[12 + hlen..bytes.len() - 32]);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        let err = decode_weights(&out).unwrap_err();
        assert!(err.to_string().contains("shape"), "{err}");
    }
}
