//! Parameter checkpoint container.
//!
//! Little-endian layout: magic `CWT1`, `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32` extents and
//! the row-major payload as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CWT1";

pub fn write<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint("rank exceeds 255".into()))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint("extent exceeds u32".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let shape = (0..rank[0]).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("{name}: extent overflow")))?;
        let mut data = Vec::new();
        for _ in 0..n {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Rounds every value to the nearest `f32`, so a checkpoint round trip
/// reproduces the tensors exactly.
pub fn round_to_f32(tensors: &mut [Tensor]) {
    for t in tensors {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_store(path: &Path, store: &ParamStore) -> Result<()> {
    let tensors: Vec<(String, Tensor)> = store.names().iter().cloned().zip(store.values().iter().cloned()).collect();
    let mut buf = Vec::new();
    write(&mut buf, &tensors)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Loads a checkpoint into an already built store; names and shapes must match.
pub fn load_store(path: &Path, store: &mut ParamStore) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let tensors = read(bytes.as_slice())?;
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!("{} tensors in file, model has {}", tensors.len(), store.len())));
    }
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        let id = super::params::ParamId(i);
        if store.name(id) != name || store.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!("tensor {i}: file has {name} {:?}", t.shape())));
        }
        *store.get_mut(id) = t;
    }
    Ok(())
}
