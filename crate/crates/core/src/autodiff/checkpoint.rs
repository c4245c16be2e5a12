//! Versioned binary parameter file.
//!
//! Layout (little-endian): magic `OACK`, `u16` version, `u32` metadata
//! length, UTF-8 JSON metadata, `u32` parameter count, then for each
//! parameter `u32` name length, name bytes, `u32` rank, `rank` x `u32`
//! dims and the `f32` values.

use std::io::{Read, Write};

use crate::binio::{self, FormatError};

use super::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OACK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, meta: &str, params: &ParamStore<f32>) -> Result<(), FormatError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        binio::write_f32s(w, p.tensor.data())?;
    }
    Ok(())
}

/// Returns the metadata blob and the named tensors in file order.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(String, Vec<(String, Tensor<f32>)>), FormatError> {
    binio::expect_magic(r, CHECKPOINT_MAGIC)?;
    let version = binio::read_u16(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let meta_len = binio::read_u32(r)? as usize;
    let meta = String::from_utf8(binio::read_bytes(r, meta_len)?)
        .map_err(|_| FormatError::Corrupt("metadata is not UTF-8".into()))?;
    let count = binio::read_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = binio::read_u32(r)? as usize;
        let name = String::from_utf8(binio::read_bytes(r, name_len)?)
            .map_err(|_| FormatError::Corrupt("parameter name is not UTF-8".into()))?;
        let rank = binio::read_u32(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(FormatError::Corrupt(format!("{name}: rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| binio::read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| FormatError::Corrupt(format!("{name}: dims {dims:?}")))?;
        let data = binio::read_f32s(r, n)?;
        let t = Tensor::new(&dims, data).map_err(|e| FormatError::Corrupt(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    Ok((meta, tensors))
}
