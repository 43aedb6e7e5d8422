//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "WHNN"                     magic
//! u32                        version (1)
//! u32                        tensor count (8)
//! per tensor: u32 ndim, ndim × u32 dims        shape table
//! per tensor: f64 values, row-major            data
//! ```
//!
//! Tensors appear in [`TENSOR_NAMES`](super::TENSOR_NAMES) order.

use std::fs;
use std::path::Path;

use super::network::ModelParams;
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WHNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let shapes = params.shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for shape in &shapes {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for tensor in params.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let chunk = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(chunk)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<ModelParams, ModelError> {
    let fail = |detail: String| ModelError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let truncated = || fail("truncated checkpoint".into());
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(fail("bad magic".into()));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let mut params = ModelParams::zeros();
    let expected = params.shapes();
    let count = cur.u32().ok_or_else(truncated)? as usize;
    if count != expected.len() {
        return Err(fail(format!("{count} tensors, expected {}", expected.len())));
    }
    for (k, want) in expected.iter().enumerate() {
        let ndim = cur.u32().ok_or_else(truncated)? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        if &dims != want {
            return Err(fail(format!("tensor {k} has shape {dims:?}, expected {want:?}")));
        }
    }
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            let b = cur.take(8).ok_or_else(truncated)?;
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if cur.at != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - cur.at)));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    read_checkpoint(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = ModelParams::init(11);
        let bytes = write_checkpoint(&p);
        assert_eq!(&bytes[..4], b"WHNN");
        let back = read_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, p);
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = write_checkpoint(&ModelParams::init(0));
        let here = Path::new("mem");
        assert!(read_checkpoint(&bytes[..bytes.len() - 1], here).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra, here).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_checkpoint(&magic, here).is_err());
        let mut shape = bytes.clone();
        shape[16] = 10;
        assert!(read_checkpoint(&shape, here).is_err());
    }
}
