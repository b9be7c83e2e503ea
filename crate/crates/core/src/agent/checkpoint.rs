//! Binary checkpoint format.
//!
//! ```text
//! "TLQN"                 4 bytes magic
//! version                u32 little-endian
//! header length          u64 little-endian
//! header                 UTF-8 JSON (CheckpointHeader)
//! 4 × array              u64 count, then count × f64 little-endian:
//!                        online params, target params, Adam m, Adam v
//! ```
//!
//! Readers accept any file with the same major `version`; unknown header
//! fields are ignored so minor additions stay compatible.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::{Adam, AdamConfig, Mlp, NetworkError};
use super::TrainConfig;

const MAGIC: &[u8; 4] = b"TLQN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0} (this build reads {FORMAT_VERSION})")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint arrays do not match layer sizes: {0}")]
    Shape(#[from] NetworkError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// SHA-256 over the training config and network shape.
    pub config_hash: String,
    pub config: TrainConfig,
    pub layer_sizes: Vec<usize>,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub adam_step: u64,
    pub epsilon_rng: ChaCha8Rng,
    pub replay_rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl Checkpoint {
    pub fn online_network(&self) -> Result<Mlp, CheckpointError> {
        Ok(Mlp::from_parts(&self.header.layer_sizes, self.online.clone())?)
    }

    pub fn target_network(&self) -> Result<Mlp, CheckpointError> {
        Ok(Mlp::from_parts(&self.header.layer_sizes, self.target.clone())?)
    }

    pub fn optimizer(&self, config: AdamConfig) -> Adam {
        Adam { config, step: self.header.adam_step, m: self.adam_m.clone(), v: self.adam_v.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let arrays = [&self.online, &self.target, &self.adam_m, &self.adam_v];
        let floats: usize = arrays.iter().map(|a| a.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 32 + 8 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in arrays {
            out.extend_from_slice(&(a.len() as u64).to_le_bytes());
            for x in a {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, at: 0 };
        if cur.take(4)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = cur.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(cur.take(len)?)?;
        let mut arrays = Vec::with_capacity(4);
        for _ in 0..4 {
            let n = cur.u64()? as usize;
            let raw = cur.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            arrays.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<_>>());
        }
        let adam_v = arrays.pop().expect("4 arrays");
        let adam_m = arrays.pop().expect("4 arrays");
        let target = arrays.pop().expect("4 arrays");
        let online = arrays.pop().expect("4 arrays");
        let ckpt = Self { header, online, target, adam_m, adam_v };
        // Validates the array lengths against the layer sizes.
        ckpt.online_network()?;
        ckpt.target_network()?;
        Ok(ckpt)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
