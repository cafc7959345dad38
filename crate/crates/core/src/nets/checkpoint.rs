//! Named-tensor archive:
//!
//! ```text
//! magic "DSCK" | version u32 | header length u32 | header JSON | f32 payloads
//! ```
//!
//! All integers and floats are little-endian. The header carries the model
//! spec, the per-sample input shape, the build seed and the `(name, shape)`
//! list; payloads follow in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_acoustic, build_text, ModelGraph, ModelSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    input_shape: Vec<usize>,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint(graph: &ModelGraph) -> Vec<u8> {
    let named = graph.named_params();
    let header = Header {
        spec: graph.spec().clone(),
        input_shape: graph.input_shape().to_vec(),
        seed: graph.seed(),
        tensors: named
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header is serializable");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, p) in named {
        for &v in &p.value {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

pub fn read_checkpoint(bytes: &[u8], origin: &Path) -> Result<ModelGraph> {
    let bad = |msg: String| Error::format(origin, "checkpoint", msg);
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing DSCK magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != VERSION {
        return Err(bad(format!("unsupported version {}", word(4))));
    }
    let header_len = word(8) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;

    let mut graph = match &header.spec {
        ModelSpec::Acoustic(spec) => match header.input_shape[..] {
            [c, t, f] => build_acoustic(spec, (t, f, c), header.seed)?,
            _ => return Err(bad(format!("acoustic input shape {:?}", header.input_shape))),
        },
        ModelSpec::Text(spec) => match header.input_shape[..] {
            [l, d] => build_text(spec, (l, d), header.seed)?,
            _ => return Err(bad(format!("text input shape {:?}", header.input_shape))),
        },
    };

    let names: Vec<(String, Vec<usize>)> = graph
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.shape.clone()))
        .collect();
    if names.len() != header.tensors.len() {
        return Err(bad(format!(
            "{} tensors stored, model has {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut offset = 12 + header_len;
    for ((name, shape), (entry, param)) in names.iter().zip(header.tensors.iter().zip(graph.params_mut())) {
        if *name != entry.name || *shape != entry.shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match model tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let n = param.value.len();
        let chunk = bytes
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(format!("payload for {name} is truncated")))?;
        for (v, c) in param.value.iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
        offset += 4 * n;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(graph)
}

pub fn save_checkpoint(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(graph)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
