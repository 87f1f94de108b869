//! Self-describing parameter container: one JSON header line followed by
//! little-endian `f32` tensor data in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::transformer::{ModelConfig, Transformer};
use crate::error::{Error, Result};

const FORMAT: &str = "signspot-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// What the tensors parameterise, e.g. `transformer` or `mlp`.
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
}

pub fn save_checkpoint(path: impl AsRef<Path>, kind: &str, config: serde_json::Value, params: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        kind: kind.into(),
        config,
        tensors: params
            .names()
            .iter()
            .zip(params.tensors())
            .map(|(n, t)| TensorInfo {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for t in params.tensors() {
        for v in t.iter() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamStore)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::parse(path, 1, format!("header: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported checkpoint {} v{}", header.format, header.version),
        ));
    }
    let mut store = ParamStore::default();
    for info in &header.tensors {
        let [rows, cols] = info.shape;
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::parse(path, 2, format!("tensor {}: {e}", info.name)))?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer");
        store.push(info.name.clone(), t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::parse(path, 2, format!("{} trailing bytes after tensor data", rest.len())));
    }
    Ok((header, store))
}

pub fn save_transformer(path: impl AsRef<Path>, model: &Transformer) -> Result<()> {
    save_checkpoint(path, "transformer", serde_json::to_value(model.config())?, model.params())
}

pub fn load_transformer(path: impl AsRef<Path>) -> Result<Transformer> {
    let path = path.as_ref();
    let (header, params) = load_checkpoint(path)?;
    if header.kind != "transformer" {
        return Err(Error::config(format!(
            "{} holds a {} checkpoint, not a transformer",
            path.display(),
            header.kind
        )));
    }
    let config: ModelConfig = serde_json::from_value(header.config)?;
    Transformer::from_params(config, params)
}
