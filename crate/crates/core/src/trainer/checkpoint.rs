//! Checkpoint file layout, little-endian throughout:
//!
//! ```text
//! "EZCK" | version u32 | count u32
//! count × (name_len u32 | name | rank u32 | dims u32… | f32 data)
//! "META" | len u32 | JSON metadata
//! ```
//!
//! Adam moments are stored as ordinary tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::ParamStore;

use super::{OptimizerState, TrainerError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EZCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_MAGIC: &[u8; 4] = b"META";
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    pub config_digest: String,
    /// Eval CER at this step, when one was computed.
    pub eval_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    step: usize,
    config_digest: String,
    eval_metric: Option<f64>,
    optimizer_step: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let count = ckpt.params.len() + ckpt.optimizer.m.len() + ckpt.optimizer.v.len();
    put_u32(&mut out, count as u32);
    for (name, t) in ckpt.params.iter() {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in &ckpt.optimizer.m {
        put_tensor(&mut out, &format!("{MOMENT_M}{name}"), t);
    }
    for (name, t) in &ckpt.optimizer.v {
        put_tensor(&mut out, &format!("{MOMENT_V}{name}"), t);
    }
    let meta = serde_json::to_vec(&Meta {
        step: ckpt.step,
        config_digest: ckpt.config_digest.clone(),
        eval_metric: ckpt.eval_metric,
        optimizer_step: ckpt.optimizer.step,
    })
    .expect("metadata serializes");
    out.extend_from_slice(META_MAGIC);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TrainerError::Corrupt(format!("truncated {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(TrainerError::Corrupt("not a checkpoint file".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainerError::BadVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut params = ParamStore::new();
    let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| TrainerError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| TrainerError::Corrupt(format!("{name}: shape overflows")))?;
        let raw = r.take(n.saturating_mul(4), "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| TrainerError::Corrupt(e.to_string()))?;
        if let Some(p) = name.strip_prefix(MOMENT_M) {
            m.insert(p.to_string(), t);
        } else if let Some(p) = name.strip_prefix(MOMENT_V) {
            v.insert(p.to_string(), t);
        } else {
            params.insert(name, t);
        }
    }
    if r.take(4, "metadata magic")? != META_MAGIC {
        return Err(TrainerError::Corrupt("missing metadata block".into()));
    }
    let len = r.u32("metadata length")? as usize;
    let meta: Meta = serde_json::from_slice(r.take(len, "metadata")?)
        .map_err(|e| TrainerError::Corrupt(format!("metadata: {e}")))?;
    if r.pos != bytes.len() {
        return Err(TrainerError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        step: meta.step,
        params,
        optimizer: OptimizerState {
            step: meta.optimizer_step,
            m,
            v,
        },
        config_digest: meta.config_digest,
        eval_metric: meta.eval_metric,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainerError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TrainerError::io(dir, e))?;
    }
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| TrainerError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainerError> {
    let bytes = std::fs::read(path).map_err(|e| TrainerError::io(path, e))?;
    decode_checkpoint(&bytes)
}
