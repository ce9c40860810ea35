//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DAVTCKPT" | u32 version | u64 header_len | header JSON
//! u32 tensor_count | tensor*
//! u64 CRC-64/XZ of every preceding byte
//! tensor = u32 name_len | name | u32 ndim | u64 dim* | f64 value*
//! ```
//!
//! Parameters come first, then one `momentum/<name>` buffer per parameter.

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricRow;
use super::sgd::{SgdMeta, SgdState};
use crate::backbone::{ParamStore, ViTConfig};
use crate::error::{Error, Result};
use crate::model::{Davt, ModelOptions};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DAVTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "momentum/";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub vit: ViTConfig,
    pub options: ModelOptions,
    pub train: TrainConfig,
    pub params: ParamStore,
    pub sgd: SgdState,
    pub history: Vec<MetricRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    vit: ViTConfig,
    options: ModelOptions,
    train: TrainConfig,
    sgd: SgdMeta,
    history: Vec<MetricRow>,
}

impl Checkpoint {
    pub fn model(&self) -> Davt {
        Davt {
            config: self.vit.clone(),
            options: self.options,
            params: self.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.sgd.buffers.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters but {} momentum buffers",
                self.params.len(),
                self.sgd.buffers.len()
            )));
        }
        let header = serde_json::to_vec(&Header {
            format_version: CHECKPOINT_VERSION,
            vit: self.vit.clone(),
            options: self.options,
            train: self.train.clone(),
            sgd: SgdMeta {
                momentum: self.sgd.momentum,
                step: self.sgd.step,
            },
            history: self.history.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&((2 * self.params.len()) as u32).to_le_bytes());
        for (name, t) in self.params.entries() {
            put_tensor(&mut out, name, t);
        }
        for ((name, _), buf) in self.params.entries().iter().zip(&self.sgd.buffers) {
            put_tensor(&mut out, &format!("{MOMENTUM_PREFIX}{name}"), buf);
        }
        let sum = CRC64.checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    /// Validates magic, version and checksum before decoding anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 {
            return Err(Error::Checkpoint(format!("truncated: only {} bytes", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version mismatch: file {version}, supported {CHECKPOINT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let actual = CRC64.checksum(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
            )));
        }

        let mut r = Reader { buf: body, pos: 12 };
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        if header.format_version != version {
            return Err(Error::Checkpoint(format!(
                "header version {} disagrees with {version}",
                header.format_version
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after tensors",
                body.len() - r.pos
            )));
        }
        if !count.is_multiple_of(2) {
            return Err(Error::Checkpoint(format!("odd tensor count {count}")));
        }
        let buffers_raw = tensors.split_off(count / 2);
        let mut buffers = Vec::with_capacity(buffers_raw.len());
        for ((pname, p), (bname, b)) in tensors.iter().zip(buffers_raw) {
            if bname.strip_prefix(MOMENTUM_PREFIX) != Some(pname.as_str()) || b.shape() != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "momentum buffer {bname} does not match parameter {pname}"
                )));
            }
            buffers.push(b);
        }
        let params = ParamStore::from_entries(tensors);
        header.vit.validate()?;
        params.check_layout(&header.vit)?;
        Ok(Self {
            vit: header.vit,
            options: header.options,
            train: header.train,
            params,
            sgd: SgdState {
                momentum: header.sgd.momentum,
                buffers,
                step: header.sgd.step,
            },
            history: header.history,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_owned();
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len()))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} has absurd shape {shape:?}")))?;
        let raw = self.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}
