//! Model container: `APMD`, a version byte, a little-endian `u32` header
//! length, the JSON header, then every tensor as `f32` LE in layer order
//! (conv weight, bias; batch-norm scale, shift, running mean, running
//! variance). The header carries a SHA-256 of the weight bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::ArchConfig;
use super::layers::Layer;
use super::model::Model;
use super::ClassifierError;
use crate::features::Normalization;

pub const MODEL_FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"APMD";
const INPUT_LAYOUT: &str = "channels=[count,bytes] rows=[in,out] cols=windows";

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    label_map: Vec<String>,
    normalization: Normalization,
    trained_on: Option<String>,
    input_layout: String,
    param_count: usize,
    stored_values: usize,
    sha256: String,
}

fn stored_tensors(model: &Model<f32>) -> Vec<&[f32]> {
    let mut out: Vec<&[f32]> = Vec::new();
    for layer in &model.layers {
        match layer {
            Layer::Conv(c) => out.extend([c.weight.as_slice(), &c.bias]),
            Layer::BatchNorm(b) => out.extend([b.gamma.as_slice(), &b.beta, &b.running_mean, &b.running_var]),
            _ => {}
        }
    }
    out
}

fn stored_tensors_mut(model: &mut Model<f32>) -> Vec<&mut Vec<f32>> {
    let mut out = Vec::new();
    for layer in &mut model.layers {
        match layer {
            Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
            Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]),
            _ => {}
        }
    }
    out
}

pub fn write_model<W: Write>(model: &Model<f32>, mut w: W) -> Result<(), ClassifierError> {
    let mut body = Vec::new();
    for t in stored_tensors(model) {
        for v in t {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        arch: model.arch.clone(),
        label_map: model.label_map.clone(),
        normalization: model.normalization,
        trained_on: model.trained_on.clone(),
        input_layout: INPUT_LAYOUT.to_string(),
        param_count: model.param_count(),
        stored_values: body.len() / 4,
        sha256: hex::encode(Sha256::digest(&body)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ClassifierError::Config(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[MODEL_FORMAT_VERSION])?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model<f32>, ClassifierError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let corrupt = |m: &str| ClassifierError::CorruptWeights(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing APMD magic"));
    }
    if bytes[4] != MODEL_FORMAT_VERSION {
        return Err(ClassifierError::Version(bytes[4]));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json = bytes.get(9..9 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&format!("header: {e}")))?;
    let body = &bytes[9 + hlen..];
    if body.len() != header.stored_values * 4 {
        return Err(corrupt(&format!(
            "expected {} weight bytes, found {}",
            header.stored_values * 4,
            body.len()
        )));
    }
    if hex::encode(Sha256::digest(body)) != header.sha256 {
        return Err(corrupt("weight digest mismatch"));
    }

    let mut model = Model::<f32>::build(header.arch, 0)
        .map_err(|e| corrupt(&format!("architecture: {e}")))?
        .with_label_map(header.label_map)
        .map_err(|e| corrupt(&e.to_string()))?
        .with_normalization(header.normalization)
        .with_trained_on(header.trained_on);
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut filled = 0;
    for t in stored_tensors_mut(&mut model) {
        for slot in t.iter_mut() {
            *slot = values
                .next()
                .ok_or_else(|| corrupt("weights shorter than architecture"))?;
            filled += 1;
        }
    }
    if filled != header.stored_values {
        return Err(corrupt("weights longer than architecture"));
    }
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>, ClassifierError> {
    read_model(fs::File::open(path)?)
}
