//! Teacher-posterior cache files.
//!
//! ```text
//! magic    4 bytes "FFTP"
//! version  u32 (1)
//! count    u32 number of records
//! record:
//!   id_len u32, id (UTF-8)
//!   frames u32, classes u32
//!   frames * classes f32 probabilities, row-major
//! ```
//!
//! All integers and floats are little endian. Files are written whole and
//! never modified in place, so any number of readers may share one.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{CriterionError, Result};
use crate::matrix::Matrix;
use crate::netcore::Posteriorgram;

pub const CACHE_MAGIC: [u8; 4] = *b"FFTP";
const CACHE_VERSION: u32 = 1;

/// Teacher posteriors keyed by utterance id.
pub type PosteriorCache = BTreeMap<String, Posteriorgram>;

pub fn write_posterior_cache(path: impl AsRef<Path>, cache: &PosteriorCache) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cache.len() as u32).to_le_bytes());
    for (id, post) in cache {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&(post.frames() as u32).to_le_bytes());
        buf.extend_from_slice(&(post.classes() as u32).to_le_bytes());
        for &p in post.matrix().as_slice() {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    // Write to a sibling file and rename so readers never see a partial file.
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_posterior_cache(path: impl AsRef<Path>) -> Result<PosteriorCache> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<PosteriorCache> {
    let bad = |m: &str| CriterionError::Cache(m.to_string());
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| bad("truncated"))?;
        at += n;
        Ok(s)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(bad("missing FFTP magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != CACHE_VERSION {
        return Err(CriterionError::Cache(format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?);
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let id_len = u32_at(take(4)?) as usize;
        let id = std::str::from_utf8(take(id_len)?)
            .map_err(|_| bad("utterance id is not UTF-8"))?
            .to_string();
        let frames = u32_at(take(4)?) as usize;
        let classes = u32_at(take(4)?) as usize;
        let data = take(frames * classes * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let post = Posteriorgram::new(Matrix::from_vec(frames, classes, data))?;
        if out.insert(id.clone(), post).is_some() {
            return Err(CriterionError::Cache(format!("duplicate utterance id `{id}`")));
        }
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}
