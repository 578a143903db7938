//! `MGSE` embedding sidecar: little-endian, 16-byte header
//! (`b"MGSE"`, u32 rows, u32 dim, u32 flags) then `rows * dim` f32 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vector::EmbeddingMatrix;

pub const MAGIC: &[u8; 4] = b"MGSE";
pub const FLAG_NORMALIZED: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    let flags = if m.is_normalized() {
        FLAG_NORMALIZED
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let bad = |message: String| Error::Sidecar {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "file is {} bytes, shorter than header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let rows = u32_at(4) as usize;
    let dim = u32_at(8) as usize;
    let flags = u32_at(12);
    let expected = HEADER_LEN + 4 * rows * dim;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {rows}x{dim}, found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if flags & FLAG_NORMALIZED != 0 {
        EmbeddingMatrix::new_normalized(rows, dim, data)
    } else {
        EmbeddingMatrix::new(rows, dim, data)
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
