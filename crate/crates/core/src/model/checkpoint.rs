//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `MATCKPT1`, a little-endian `u64` header length,
//! a JSON header, then the raw little-endian payload. The header records the
//! model config, the step counter, free-form trainer metadata and, for every
//! array, its name, dtype, shape and payload offset.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::layout::param_specs;
use crate::model::mat::MatModel;
use crate::model::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"MATCKPT1";

/// Everything a checkpoint file holds.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub step: u64,
    pub params: ParamStore<T>,
    /// Auxiliary arrays (optimizer moments), not part of the model.
    pub state: ParamStore<T>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: DType,
    shape: [usize; 4],
    offset: u64,
    #[serde(default)]
    state: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &MatModel<T>, step: u64) -> Self {
        Checkpoint {
            config: model.config().clone(),
            step,
            params: model.params().clone(),
            state: ParamStore::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn into_model(self) -> Result<MatModel<T>> {
        MatModel::from_params(self.config, self.params)
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    let mut arrays = Vec::new();
    let groups = [(&ckpt.params, false), (&ckpt.state, true)];
    for (store, state) in groups {
        for (name, t) in store.iter() {
            arrays.push(ArrayEntry {
                name: name.to_string(),
                dtype: T::DTYPE,
                shape: t.shape().dims(),
                offset: payload.len() as u64,
                state,
            });
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
    }
    let header = Header {
        config: ckpt.config.clone(),
        step: ckpt.step,
        arrays,
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Input(format!("header encoding: {e}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(MAGIC)
        .and_then(|_| f.write_all(&(header.len() as u64).to_le_bytes()))
        .and_then(|_| f.write_all(&header))
        .and_then(|_| f.write_all(&payload))
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn decode<T: Scalar>(bytes: &[u8], dtype: DType) -> Vec<T> {
    match dtype {
        DType::F32 => bytes.chunks_exact(4).map(|b| T::from_f64(f32::read_le(b) as f64)).collect(),
        DType::F64 => bytes.chunks_exact(8).map(|b| T::from_f64(f64::read_le(b))).collect(),
    }
}

/// Read a checkpoint. With `expected`, every parameter is checked against
/// that config's shapes and the stored config is replaced by it.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let integrity = |position: usize, detail: String| Error::Integrity {
        position: position as u64,
        detail,
    };
    if bytes.len() < 16 {
        return Err(integrity(bytes.len(), "file ends inside the header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        integrity(bytes.len(), format!("header of {hlen} bytes runs past the end of the file"))
    })?;
    let header: Header = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| integrity(16 + e.column(), format!("malformed header: {e}")))?;
    let payload = &bytes[body..];

    let mut expected_len = 0u64;
    for a in &header.arrays {
        let n = Shape::from_dims(a.shape).numel() as u64;
        if a.offset != expected_len {
            return Err(integrity(body + a.offset as usize, format!("array `{}` at unexpected offset", a.name)));
        }
        expected_len += n * a.dtype.size() as u64;
    }
    let expected_end = body as u64 + expected_len;
    if (payload.len() as u64) < expected_len {
        return Err(integrity(
            bytes.len(),
            format!("payload truncated: file ends at byte {} but arrays need {expected_end}", bytes.len()),
        ));
    }
    if (payload.len() as u64) > expected_len {
        return Err(integrity(expected_end as usize, format!("{} trailing bytes after payload", payload.len() as u64 - expected_len)));
    }

    let mut params = ParamStore::new();
    let mut state = ParamStore::new();
    for a in &header.arrays {
        let shape = Shape::from_dims(a.shape);
        let start = a.offset as usize;
        let end = start + shape.numel() * a.dtype.size();
        let t = Tensor::new(shape, decode(&payload[start..end], a.dtype))
            .map_err(|e| integrity(body + start, format!("array `{}`: {e}", a.name)))?;
        if a.state {
            state.insert(a.name.clone(), t);
        } else {
            params.insert(a.name.clone(), t);
        }
    }

    let mut config = header.config;
    if let Some(cfg) = expected {
        let specs = param_specs(cfg);
        for spec in &specs {
            let found = params.get(&spec.name)?.shape();
            if found != spec.shape {
                return Err(Error::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.dims(),
                    found: found.dims(),
                });
            }
        }
        if let Some(extra) = params.names().find(|n| !specs.iter().any(|s| s.name == *n)) {
            return Err(Error::UnexpectedParam(extra.to_string()));
        }
        config = cfg.clone();
    }
    Ok(Checkpoint {
        config,
        step: header.step,
        params,
        state,
        meta: header.meta,
    })
}

impl<T: Scalar> MatModel<T> {
    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        save_checkpoint(&Checkpoint::from_model(self, step), path)
    }

    /// Load a model, using the stored config unless `expected` is given.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        load_checkpoint(path, expected)?.into_model()
    }
}
