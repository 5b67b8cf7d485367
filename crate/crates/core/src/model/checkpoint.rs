//! Checkpoint file: one line of JSON config, then the parameter tensors.
//!
//! ```text
//! <compact JSON header>\n
//! u32            tensor count
//! per tensor:    u32 rank, rank * u32 dims, numel * f32 values
//! ```
//!
//! All integers and floats are little-endian; tensors follow the
//! [`ParamLayout`](super::ParamLayout) order.

use std::io::{BufRead, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DsGtfParams, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "dsgtf-checkpoint-v1";

fn bad(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

pub fn write_checkpoint(w: &mut impl Write, header: &impl Serialize, params: &DsGtfParams) -> Result<()> {
    let json = serde_json::to_string(header)?;
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(json.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    let tensors = params.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

/// Reads the header, derives the model dimensions from it, and loads the tensors.
pub fn read_checkpoint<H: DeserializeOwned>(
    r: &mut impl BufRead,
    model_config: impl FnOnce(&H) -> Result<ModelConfig>,
) -> Result<(H, DsGtfParams)> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    if !line.ends_with('\n') {
        return Err(bad("missing header line"));
    }
    let header: H = serde_json::from_str(line.trim_end())?;
    let config = model_config(&header)?;

    let count = read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(bad(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| bad(format!("truncated tensor: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| bad(e.to_string()))?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok((header, DsGtfParams::from_tensors(&config, tensors)?))
}
