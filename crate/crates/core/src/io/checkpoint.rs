//! Checkpoints: a JSON manifest (architecture, tensor shapes, optimizer
//! step, training metadata) followed by raw little-endian f32 arrays, all
//! in one file. Weight bytes round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, TrainConfig};
use crate::num::{AdamState, Tensor};

use super::{io_err, IoError, IoResult};

pub const CHECKPOINT_VERSION: u32 = 2;
const MAGIC: &[u8; 4] = b"SYTC";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub steps_done: u64,
    pub train: TrainConfig,
    pub dataset_sha256: String,
    /// Tail of the loss curve (most recent last).
    pub loss_tail: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
    has_optimizer: bool,
    meta: TrainMeta,
}

/// A trained model plus optimizer state and metadata.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub opt: Option<AdamState<f32>>,
    pub meta: TrainMeta,
}

fn push_tensor(bytes: &mut Vec<u8>, t: &Tensor<f32>) {
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor(bytes: &mut &[u8], shape: &[usize], path: &Path) -> IoResult<Tensor<f32>> {
    let numel: usize = shape.iter().product();
    if bytes.len() < numel * 4 {
        return Err(IoError::Format {
            path: path.display().to_string(),
            msg: "weight payload truncated".into(),
        });
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[i * 4..i * 4 + 4]);
        data.push(f32::from_le_bytes(b));
    }
    *bytes = &bytes[numel * 4..];
    Tensor::new(shape.to_vec(), data).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> IoResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tensors: Vec<TensorInfo> = ckpt
        .model
        .names
        .iter()
        .zip(&ckpt.model.params)
        .map(|(n, t)| TensorInfo {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: ckpt.model.cfg.clone(),
        tensors,
        has_optimizer: ckpt.opt.is_some(),
        meta: ckpt.meta.clone(),
    };
    let mjson = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut payload = Vec::new();
    for t in &ckpt.model.params {
        push_tensor(&mut payload, t);
    }
    if let Some(opt) = &ckpt.opt {
        let (m, v) = opt.moments();
        for t in m.iter().chain(v.iter()) {
            push_tensor(&mut payload, t);
        }
    }

    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(MAGIC).map_err(|e| io_err(path, e))?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    f.write_all(&(mjson.len() as u64).to_le_bytes())
        .map_err(|e| io_err(path, e))?;
    f.write_all(&mjson).map_err(|e| io_err(path, e))?;
    f.write_all(&payload).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> IoResult<Checkpoint> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut all = Vec::new();
    f.read_to_end(&mut all).map_err(|e| io_err(path, e))?;
    let perr = |msg: &str| IoError::Format {
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    if all.len() < 16 || &all[0..4] != MAGIC {
        return Err(perr("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(all[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            path: path.display().to_string(),
            got: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(all[8..16].try_into().expect("8 bytes")) as usize;
    if all.len() < 16 + mlen {
        return Err(perr("manifest truncated"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&all[16..16 + mlen]).map_err(|e| IoError::Format {
            path: path.display().to_string(),
            msg: format!("manifest: {e}"),
        })?;

    let mut bytes = &all[16 + mlen..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for info in &manifest.tensors {
        let t = read_tensor(&mut bytes, &info.shape, path)?;
        tensors.push((info.name.clone(), t));
    }
    let model = Model::from_parts(manifest.config.clone(), tensors).map_err(|e| IoError::Format {
        path: path.display().to_string(),
        msg: e,
    })?;

    let opt = if manifest.has_optimizer {
        let mut m = Vec::with_capacity(manifest.tensors.len());
        for info in &manifest.tensors {
            m.push(read_tensor(&mut bytes, &info.shape, path)?);
        }
        let mut v = Vec::with_capacity(manifest.tensors.len());
        for info in &manifest.tensors {
            v.push(read_tensor(&mut bytes, &info.shape, path)?);
        }
        Some(AdamState::restore(
            m,
            v,
            manifest.meta.steps_done,
            manifest.meta.train.lr,
        ))
    } else {
        None
    };
    if !bytes.is_empty() {
        return Err(perr("trailing bytes after weight payload"));
    }
    Ok(Checkpoint {
        model,
        opt,
        meta: manifest.meta,
    })
}
