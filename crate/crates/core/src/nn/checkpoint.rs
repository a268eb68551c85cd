//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     ASCII "SRLSTMCK"
//! 8       4     u32 format version (1)
//! 12      4     u32 H (hidden units)
//! 16      4     u32 D (input size)
//! 20      4     u32 K (classes)
//! 24      8     u64 number of f32 values that follow
//! 32      4·n   f32 values in declared order:
//!               Wi, Wf, Wo, Wg   each [H][D] row-major
//!               Ui, Uf, Uo, Ug   each [H][H] row-major
//!               bi, bf, bo, bg   each [H]
//!               Wd               [K][H] row-major
//!               bd               [K]
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is exact.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::params::{Dims, Gate, LstmParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRLSTMCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checkpoint declares {declared} values but dimensions require {expected}")]
    LengthMismatch { declared: u64, expected: usize },
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parameter indices in checkpoint order.
fn declared_order(dims: Dims) -> Vec<usize> {
    let probe = LstmParams::<f32>::zeros(dims);
    let mut order = Vec::with_capacity(dims.param_count());
    for gate in Gate::ALL {
        for unit in 0..dims.hidden {
            order.extend((0..dims.input).map(|j| probe.input_index(gate, unit, j)));
        }
    }
    for gate in Gate::ALL {
        for unit in 0..dims.hidden {
            order.extend((0..dims.hidden).map(|j| probe.recurrent_index(gate, unit, j)));
        }
    }
    // biases and the dense layer are already stored in declared order
    let tail_start =
        dims.param_count() - (dims.gate_width() + dims.classes * dims.hidden + dims.classes);
    order.extend(tail_start..dims.param_count());
    order
}

pub fn encode(params: &LstmParams<f32>) -> Vec<u8> {
    let dims = params.dims();
    let values = params.as_slice();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in [dims.hidden, dims.input, dims.classes] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for idx in declared_order(dims) {
        out.extend_from_slice(&values[idx].to_bits().to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<LstmParams<f32>, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32_at(bytes, 8);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dims = Dims::new(
        u32_at(bytes, 12) as usize,
        u32_at(bytes, 16) as usize,
        u32_at(bytes, 20) as usize,
    );
    let declared = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
    if declared != dims.param_count() as u64 {
        return Err(CheckpointError::LengthMismatch {
            declared,
            expected: dims.param_count(),
        });
    }
    let needed = HEADER_LEN + 4 * dims.param_count();
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let mut data = vec![0.0f32; dims.param_count()];
    for (chunk, idx) in bytes[HEADER_LEN..needed]
        .chunks_exact(4)
        .zip(declared_order(dims))
    {
        data[idx] = f32::from_bits(u32::from_le_bytes(chunk.try_into().expect("4 bytes")));
    }
    Ok(LstmParams::from_flat(dims, data).expect("length checked above"))
}

pub fn save(params: &LstmParams<f32>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(params)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<LstmParams<f32>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
