//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic, u64 little-endian manifest length, JSON manifest,
//! then every parameter as little-endian scalars in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::model::{InputDims, ModelConfig, WaveFormer};
use crate::tensor::{Precision, Real};

const MAGIC: &[u8; 8] = b"WVFMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub precision: Precision,
    pub model: ModelConfig,
    pub dims: InputDims,
    pub normalization: Option<ChannelStats>,
    pub params: Vec<ParamEntry>,
}

pub fn to_bytes<T: Real>(
    model: &WaveFormer<T>,
    normalization: Option<&ChannelStats>,
) -> Result<Vec<u8>> {
    let params = model.params();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        precision: T::PRECISION,
        model: model.config().clone(),
        dims: model.dims(),
        normalization: normalization.cloned(),
        params: params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + params.num_scalars() * T::PRECISION.bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in params.iter() {
        t.data().iter().for_each(|&v| v.write_le(&mut out));
    }
    Ok(out)
}

fn split_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(
            "not a checkpoint file (bad magic)".into(),
        ));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(body)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok((manifest, &bytes[16 + len..]))
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(WaveFormer<T>, Option<ChannelStats>)> {
    let (manifest, mut payload) = split_manifest(bytes)?;
    if manifest.precision != T::PRECISION {
        return Err(Error::Checkpoint(format!(
            "stored as {}, requested {}",
            manifest.precision,
            T::PRECISION
        )));
    }
    let mut model = WaveFormer::<T>::new(manifest.model.clone(), manifest.dims, 0)?;
    if manifest.params.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{} stored parameters, model has {}",
            manifest.params.len(),
            model.params().len()
        )));
    }
    let width = T::PRECISION.bytes();
    for entry in &manifest.params {
        let id = model
            .params()
            .id(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
        if model.params().get(id).shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                model.params().get(id).shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        if payload.len() < n * width {
            return Err(Error::Checkpoint(format!(
                "truncated data for `{}`",
                entry.name
            )));
        }
        let (chunk, rest) = payload.split_at(n * width);
        model
            .params_mut()
            .set_data(id, chunk.chunks_exact(width).map(T::read_le).collect())?;
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            payload.len()
        )));
    }
    Ok((model, manifest.normalization))
}

pub fn save<T: Real>(
    path: &Path,
    model: &WaveFormer<T>,
    normalization: Option<&ChannelStats>,
) -> Result<()> {
    fs::write(path, to_bytes(model, normalization)?).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(split_manifest(&bytes)?.0)
}

pub fn load<T: Real>(path: &Path) -> Result<(WaveFormer<T>, Option<ChannelStats>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
