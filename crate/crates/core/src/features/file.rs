//! `MFV1` binary feature files: magic, u32 count, u32 dims, then `count`
//! records of (u32 id length, id bytes, dims × f32), all little-endian.

use std::path::Path;

use super::FeatureVector;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MFV1";

pub fn write_feature_file<'a>(
    path: &Path,
    dims: usize,
    items: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    std::fs::write(path, encode(dims, items)?)?;
    Ok(())
}

pub(crate) fn encode<'a>(
    dims: usize,
    items: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut count = 0u32;
    for (id, values) in items {
        if values.len() != dims {
            return Err(Error::dims(dims, values.len()));
        }
        body.extend_from_slice(&(id.len() as u32).to_le_bytes());
        body.extend_from_slice(id.as_bytes());
        for &v in values {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
        count += 1;
    }
    let mut out = Vec::with_capacity(12 + body.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(dims as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedFile(format!("{what} at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a feature file; vectors are L2-normalized.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, FeatureVector)>> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let count = cur.u32("header count")? as usize;
    let dims = cur.u32("header dims")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for k in 0..count {
        let id_len = cur.u32(&format!("record {k} id length"))? as usize;
        let id = std::str::from_utf8(cur.take(id_len, &format!("record {k} id"))?)
            .map_err(|e| Error::MalformedFile(format!("record {k} id: {e}")))?
            .to_string();
        let raw = cur.take(dims * 4, &format!("record {k} values"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((id, FeatureVector::unit(values)));
    }
    Ok(out)
}

pub fn load_feature_file(path: &Path) -> Result<Vec<(String, FeatureVector)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode(&bytes)
}

/// Like [`load_feature_file`] but rejects files whose dimensionality differs.
pub fn load_feature_file_with_dims(path: &Path, dims: usize) -> Result<Vec<(String, FeatureVector)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if bytes.len() >= 12 && &bytes[..4] == FEATURE_MAGIC {
        let file_dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if file_dims != dims {
            return Err(Error::dims(dims, file_dims));
        }
    }
    decode(&bytes)
}
