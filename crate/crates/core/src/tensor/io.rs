//! Named-tensor files: `RTW1`, u32 count, then per tensor a u32 name length,
//! the UTF-8 name, u32 rank, u32 dims and f32 values, all little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

const MAGIC: &[u8; 4] = b"RTW1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor<f32>)]) -> Result<(), TensorError> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| TensorError::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| TensorError::Format("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(TensorError::Format(format!("name length {len} too large")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| TensorError::Format("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Format("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(TensorError::Format(format!("rank {rank} too large")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= 1 << 28);
        let n = n.ok_or_else(|| TensorError::Format(format!("tensor {name} shape {shape:?} too large")))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| TensorError::Format(format!("truncated values for {name}")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Format("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<(), TensorError> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, TensorError> {
    read_tensors(fs::read(path)?.as_slice())
}
