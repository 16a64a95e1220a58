//! The `HALT` binary tensor format.
//!
//! Layout: magic `HALT0001`, little-endian `u32` rank, `u32` extents, one
//! `u8` dtype tag (1 = float64), then the row-major payload as LE `f64`.

use std::io::{Read, Write};

use super::{Tensor, MAX_RANK};
use crate::error::{HaloError, Result};

pub const HALT_MAGIC: &[u8; 8] = b"HALT0001";
pub const HALT_DTYPE_F64: u8 = 1;

pub fn write_halt<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(HALT_MAGIC)?;
    w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[HALT_DTYPE_F64])?;
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_halt<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != HALT_MAGIC {
        return Err(HaloError::Format("bad HALT magic".into()));
    }
    let rank = read_u32(r)? as usize;
    if rank > MAX_RANK {
        return Err(HaloError::Format(format!("HALT rank {rank} too large")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let mut dtype = [0u8; 1];
    r.read_exact(&mut dtype)?;
    if dtype[0] != HALT_DTYPE_F64 {
        return Err(HaloError::Format(format!("unsupported HALT dtype {}", dtype[0])));
    }
    let n: usize = dims.iter().product();
    let mut payload = vec![0u8; n * 8];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(&dims, data).map_err(|e| HaloError::Format(e.to_string()))
}
