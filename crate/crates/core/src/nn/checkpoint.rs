//! Parameter checkpoint file.
//!
//! ```text
//! magic    8 bytes  "AV2VCKPT"
//! hlen     u32 LE   length of the JSON header in bytes
//! header   hlen bytes UTF-8 JSON:
//!          {"version": 1, "config": ModelConfig, "vocab": [token, ...],
//!           "tensors": [{"name": .., "rows": .., "cols": ..}, ...]}
//! data     for each header tensor in order: rows*cols f32 LE, row-major
//! ```

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::params::ParamStore;
use super::NnError;
use crate::vocab::Vocab;
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AV2VCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(model: &Model<T>, mut w: W) -> Result<(), NnError> {
    let params = &model.params;
    let header = Header {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab: model.vocab().tokens().to_vec(),
        tensors: params
            .ids()
            .map(|id| {
                let (rows, cols) = params.get(id).dim();
                TensorEntry { name: params.name(id).to_string(), rows, cols }
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 12 + params.n_scalars() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for id in params.ids() {
        for &x in params.get(id).iter() {
            buf.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| NnError::Io(e.to_string()))
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Model<T>, NnError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| NnError::Io(e.to_string()))?;
    let corrupt = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut data = &bytes[12 + hlen..];
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n = t.rows * t.cols;
        if data.len() < n * 4 {
            return Err(corrupt("truncated tensor data"));
        }
        let values: Vec<T> = data[..n * 4]
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        data = &data[n * 4..];
        store.add(t.name.clone(), Array2::from_shape_vec((t.rows, t.cols), values).expect("shape matches length"));
    }
    if !data.is_empty() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    Model::with_params(header.config, vocab, store)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &std::path::Path) -> Result<(), NnError> {
    let f = std::fs::File::create(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load_checkpoint<T: Scalar>(path: &std::path::Path) -> Result<Model<T>, NnError> {
    let f = std::fs::File::open(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(f))
}
