//! Checkpoint serialization.
//!
//! Layout: an 8-byte little-endian header length, a JSON header, then a raw
//! tensor payload. The header maps each tensor name to its dtype, shape,
//! and byte offset into the payload, and stores the model configuration
//! under the reserved `__config__` key. Payload values are little-endian
//! f32 in the canonical tensor order of [`Weights::named`]. Header keys are
//! emitted sorted, so saving the same weights twice yields identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights};

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

const CONFIG_KEY: &str = "__config__";

pub fn save_checkpoint(weights: &Weights<f32>, path: impl AsRef<Path>) -> Result<()> {
    weights.config.validate()?;
    let named = weights.named();
    let mut header: BTreeMap<String, serde_json::Value> = BTreeMap::new();
    header.insert(CONFIG_KEY.into(), serde_json::to_value(weights.config)?);
    let mut offset = 0u64;
    for (name, tensor) in &named {
        if !tensor.data().iter().all(|x| x.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor '{name}' contains non-finite values")));
        }
        let meta = TensorMeta { dtype: "f32".into(), shape: tensor.shape().to_vec(), offset };
        header.insert(name.clone(), serde_json::to_value(meta)?);
        offset += 4 * tensor.data().len() as u64;
    }
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset as usize);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, tensor) in &named {
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Weights<f32>> {
    let bytes = fs::read(&path)?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint(format!(
            "file is {} bytes, too short for the header length field",
            bytes.len()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if header_len > bytes.len() - 8 {
        return Err(Error::Checkpoint(format!(
            "header length {header_len} exceeds the {} bytes after the length field",
            bytes.len() - 8
        )));
    }
    let header: BTreeMap<String, serde_json::Value> =
        serde_json::from_slice(&bytes[8..8 + header_len])
            .map_err(|e| Error::Checkpoint(format!("malformed JSON header: {e}")))?;
    let payload = &bytes[8 + header_len..];

    let config_value = header
        .get(CONFIG_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("missing {CONFIG_KEY} entry")))?;
    let config: ModelConfig = serde_json::from_value(config_value.clone())
        .map_err(|e| Error::Checkpoint(format!("malformed {CONFIG_KEY} entry: {e}")))?;
    config.validate()?;

    let mut weights = Weights::<f32>::zeros(&config)?;
    {
        let named = weights.named();
        for key in header.keys() {
            if key != CONFIG_KEY && !named.iter().any(|(n, _)| n == key) {
                return Err(Error::Checkpoint(format!(
                    "unexpected tensor '{key}' for this configuration"
                )));
            }
        }
    }

    let mut covered = 0usize;
    for (name, tensor) in weights.named_mut() {
        let value = header
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        let meta: TensorMeta = serde_json::from_value(value.clone())
            .map_err(|e| Error::Checkpoint(format!("malformed entry for tensor '{name}': {e}")))?;
        if meta.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has dtype '{}', expected 'f32'",
                meta.dtype
            )));
        }
        if meta.shape.as_slice() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                meta.shape,
                tensor.shape()
            )));
        }
        let n = tensor.data().len();
        let start = usize::try_from(meta.offset)
            .map_err(|_| Error::Checkpoint(format!("tensor '{name}' offset overflows")))?;
        let end = start
            .checked_add(4 * n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' offset overflows")))?;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' spans payload bytes {start}..{end} but the payload is {} bytes",
                payload.len()
            )));
        }
        for (i, out) in tensor.data_mut().iter_mut().enumerate() {
            let chunk = &payload[start + 4 * i..start + 4 * i + 4];
            *out = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if !tensor.data().iter().all(|x| x.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor '{name}' contains non-finite values")));
        }
        covered += 4 * n;
    }
    if covered != payload.len() {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes but the declared tensors cover {covered}",
            payload.len()
        )));
    }
    Ok(weights)
}
