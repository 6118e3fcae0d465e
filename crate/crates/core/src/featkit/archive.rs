//! Feature archive: one utterance per file.
//!
//! Layout (little endian):
//!
//! | bytes | field                     |
//! |-------|---------------------------|
//! | 4     | magic `FFEA`              |
//! | 4     | u32 version (1)           |
//! | 4     | u32 dim                   |
//! | 4     | u32 frame count           |
//! | 8     | f64 frame shift (ms)      |
//! | 4·T·D | f32 frames, row-major     |

use std::fs;
use std::path::Path;

use super::{FeatError, FeatureSequence, Result};
use crate::matrix::Matrix;

pub const ARCHIVE_MAGIC: [u8; 4] = *b"FFEA";
pub const ARCHIVE_VERSION: u32 = 1;
const HEADER: usize = 24;

pub fn write_archive(path: impl AsRef<Path>, f: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER + 4 * f.len() * f.dim());
    buf.extend_from_slice(&ARCHIVE_MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(f.len() as u32).to_le_bytes());
    buf.extend_from_slice(&f.frame_shift_ms().to_le_bytes());
    for v in f.frames().as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<FeatureSequence> {
    if bytes.len() < HEADER || bytes[..4] != ARCHIVE_MAGIC {
        return Err(FeatError::Format("missing FFEA header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != ARCHIVE_VERSION {
        return Err(FeatError::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let frames = u32_at(12) as usize;
    let shift = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let want = HEADER + 4 * dim * frames;
    if bytes.len() != want {
        return Err(FeatError::Format(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - HEADER,
            want - HEADER
        )));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSequence::new(Matrix::from_vec(frames, dim, data), shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn archive_round_trip_is_bit_exact(t in 0usize..20, d in 1usize..10, seed in any::<u32>()) {
            let data: Vec<f32> = (0..t * d).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-6).collect();
            let f = FeatureSequence::new(Matrix::from_vec(t, d, data), 30.0).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.ffea");
            write_archive(&p, &f).unwrap();
            prop_assert_eq!(read_archive(&p).unwrap(), f);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let f = FeatureSequence::new(Matrix::from_vec(2, 2, vec![1.0; 4]), 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ffea");
        write_archive(&p, &f).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(FeatError::Format(_))));
        assert!(matches!(decode(b"nope"), Err(FeatError::Format(_))));
    }
}
