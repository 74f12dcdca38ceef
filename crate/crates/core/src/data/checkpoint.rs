//! Binary checkpoint format.
//!
//! ```text
//! "MCSE" | version u32 | payload length u64 | payload | sha256(everything before)
//! payload: kind u8 | width, mid width, classes, H, W, C, experts, top_k as u32
//!          | tensor count u32 | per tensor: name (u16 len + utf8), rank u8, dims u64.., f32 values
//!          | state length u64 | state blob
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use ndgrad::Tensor;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{io_err, Result};
use crate::model::{Model, ModelConfig, ModelKind, Param};

pub const MAGIC: &[u8; 4] = b"MCSE";
pub const FORMAT_VERSION: u32 = 2;
const HEADER: usize = 4 + 4 + 8;
const DIGEST: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("format version {found}, this build reads version {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed payload: {0}")]
    Malformed(String),
}

/// Optimizer state saved alongside the parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: u64,
    /// Momentum buffers, one per parameter tensor, same order.
    pub velocities: Vec<Vec<f32>>,
}

impl TrainState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(self.epoch.to_le_bytes());
        out.extend((self.velocities.len() as u32).to_le_bytes());
        for v in &self.velocities {
            out.extend((v.len() as u64).to_le_bytes());
            for x in v {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let epoch = r.u64()?;
        let count = r.u32()? as usize;
        let mut velocities = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u64()? as usize;
            velocities.push(r.f32s(len)?);
        }
        r.finish()?;
        Ok(Self { epoch, velocities })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub state: Option<TrainState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Malformed(format!("field at offset {} overruns payload", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        if self.pos != self.bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode(model: &Model<f32>, state: Option<&TrainState>) -> Vec<u8> {
    let c = model.config();
    let mut p = vec![c.kind.tag()];
    for v in [
        c.width,
        c.mid_width,
        c.num_classes,
        c.input[0],
        c.input[1],
        c.input[2],
        c.experts,
        c.top_k,
    ] {
        p.extend((v as u32).to_le_bytes());
    }
    p.extend((model.params().len() as u32).to_le_bytes());
    for param in model.params() {
        p.extend((param.name.len() as u16).to_le_bytes());
        p.extend(param.name.as_bytes());
        p.push(param.value.ndim() as u8);
        for &d in param.value.shape() {
            p.extend((d as u64).to_le_bytes());
        }
        for v in param.value.data() {
            p.extend(v.to_le_bytes());
        }
    }
    let blob = state.map(TrainState::to_bytes).unwrap_or_default();
    p.extend((blob.len() as u64).to_le_bytes());
    p.extend(blob);

    let mut out = Vec::with_capacity(HEADER + p.len() + DIGEST);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((p.len() as u64).to_le_bytes());
    out.extend(p);
    let digest = Sha256::digest(&out);
    out.extend(digest);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < HEADER {
        return Err(CheckpointError::Truncated {
            expected: HEADER + DIGEST,
            found: bytes.len(),
        }
        .into());
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version { found }.into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(HEADER + DIGEST))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(CheckpointError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let (body, digest) = bytes.split_at(expected - DIGEST);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum.into());
    }

    let mut r = Reader {
        bytes: &body[HEADER..],
        pos: 0,
    };
    let tag = r.u8()?;
    let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::UnknownKind(tag))?;
    let mut h = [0usize; 8];
    for v in &mut h {
        *v = r.u32()? as usize;
    }
    let config = ModelConfig {
        kind,
        width: h[0],
        mid_width: h[1],
        num_classes: h[2],
        input: [h[3], h[4], h[5]],
        experts: h[6],
        top_k: h[7],
    };
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = usize::from(r.u16()?);
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = usize::from(r.u8()?);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` too large")))?;
        let value = Tensor::new(&shape, r.f32s(numel)?)?;
        params.push(Param { name, value });
    }
    let blob_len = r.u64()? as usize;
    let blob = r.take(blob_len)?;
    r.finish()?;
    let state = if blob.is_empty() {
        None
    } else {
        Some(TrainState::from_bytes(blob)?)
    };
    Ok(Checkpoint {
        model: Model::from_params(config, params)?,
        state,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model<f32>,
    state: Option<&TrainState>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model, state)).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(io_err(path))?)
}
