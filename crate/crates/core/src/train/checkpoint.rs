//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `MAGIC`, `u32` version, `u32` header length, JSON header (network and
//! training configuration, epoch, seed), `u32` tensor count, then for every
//! parameter tensor followed by every velocity tensor: `u32` rank, `u64`
//! dimensions, `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::net::{NetworkConfig, NetworkParams, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BSNGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network state plus what is needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams<f32>,
    pub training: TrainingConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: NetworkConfig,
    training: TrainingConfig,
    epoch: usize,
    seed: u64,
}

impl Checkpoint {
    /// Fails unless the checkpoint predicts `num_classes` classes.
    pub fn ensure_classes(&self, num_classes: usize) -> Result<()> {
        let found = self.params.config().num_classes;
        if found != num_classes {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {found} classes, corpus has {num_classes}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            network: self.params.config().clone(),
            training: self.training.clone(),
            epoch: self.epoch,
            seed: self.seed,
        })
        .expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors: Vec<&Tensor<f32>> = self.params.tensors().iter().chain(self.params.velocity()).collect();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::CorruptCheckpoint("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = read_u32(&mut r)? as usize;
        if header_len > r.len() {
            return Err(truncated());
        }
        let (header, rest) = r.split_at(header_len);
        r = rest;
        let header: Header =
            serde_json::from_slice(header).map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

        let shapes = header.network.param_shapes();
        let count = read_u32(&mut r)? as usize;
        if count != 2 * shapes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{count} tensors stored, {} expected",
                2 * shapes.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::CorruptCheckpoint(format!("tensor rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = match n {
                Some(n) if n.checked_mul(4).is_some_and(|b| b <= r.len()) => n,
                _ => return Err(truncated()),
            };
            let (values, rest) = r.split_at(n * 4);
            r = rest;
            let data = values
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        if !r.is_empty() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.len())));
        }
        let velocity = tensors.split_off(shapes.len());
        let params = NetworkParams::from_parts(header.network, tensors, velocity)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(Self {
            params,
            training: header.training,
            epoch: header.epoch,
            seed: header.seed,
        })
    }
}

fn truncated() -> Error {
    Error::CorruptCheckpoint("file is truncated".into())
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| truncated())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Writes the checkpoint through a temporary file renamed into place.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&checkpoint.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
