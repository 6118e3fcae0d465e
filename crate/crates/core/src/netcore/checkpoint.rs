//! Checkpoint files.
//!
//! Layout (little endian):
//!
//! ```text
//! magic      4 bytes  "FFNC"
//! layout     u32      parameter layout version
//! width      u8       bytes per parameter (4 or 8)
//! spec_len   u32      length of the JSON model spec
//! spec       spec_len bytes of UTF-8 JSON
//! count      u64      number of parameters
//! params     count * width bytes
//! ```

use std::fs;
use std::path::Path;

use super::layout::LAYOUT_VERSION;
use super::network::Network;
use super::spec::ModelSpec;
use super::{NetError, Result};
use crate::matrix::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FFNC";

pub fn write_checkpoint<F: Real>(net: &Network<F>) -> Vec<u8> {
    let spec = serde_json::to_vec(net.spec()).expect("spec serializes");
    let mut buf = Vec::with_capacity(21 + spec.len() + net.num_params() * F::WIDTH as usize);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
    buf.push(F::WIDTH);
    buf.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    buf.extend_from_slice(&spec);
    buf.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for &p in net.params() {
        p.to_le_bytes_vec(&mut buf);
    }
    buf
}

pub fn read_checkpoint<F: Real>(bytes: &[u8]) -> Result<Network<F>> {
    let bad = |m: &str| NetError::Checkpoint(m.to_string());
    let take = |at: usize, n: usize| bytes.get(at..at + n).ok_or_else(|| bad("truncated header"));
    if take(0, 4)? != CHECKPOINT_MAGIC {
        return Err(bad("missing FFNC magic"));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != LAYOUT_VERSION {
        return Err(NetError::Checkpoint(format!("unsupported layout version {version}")));
    }
    let width = take(8, 1)?[0];
    if width != F::WIDTH {
        return Err(NetError::Checkpoint(format!(
            "checkpoint stores {}-byte parameters, loader expects {}",
            width,
            F::WIDTH
        )));
    }
    let spec_len = u32::from_le_bytes(take(9, 4)?.try_into().unwrap()) as usize;
    let spec: ModelSpec = serde_json::from_slice(take(13, spec_len)?)
        .map_err(|e| NetError::Checkpoint(format!("spec: {e}")))?;
    let at = 13 + spec_len;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
    let payload = &bytes[at + 8..];
    if payload.len() != count * width as usize {
        return Err(bad("payload length does not match parameter count"));
    }
    let params = payload
        .chunks_exact(width as usize)
        .map(F::from_le_slice)
        .collect();
    Network::from_params(spec, params)
}

pub fn save_checkpoint<F: Real>(path: impl AsRef<Path>, net: &Network<F>) -> Result<()> {
    fs::write(path, write_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<Network<F>> {
    read_checkpoint(&fs::read(path)?)
}
