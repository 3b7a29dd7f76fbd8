//! Named-tensor checkpoints: magic, count, then per tensor the name, shape
//! and little-endian f64 data.

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TNSRCKP1";

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a tensor checkpoint".into()));
    }
    let n = read_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = read_u64(&mut r)? as usize;
        if len > 1 << 20 {
            return Err(Error::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|&c| c <= 1 << 32)
            .ok_or_else(|| Error::Format(format!("implausible shape {rows}x{cols}")))?;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor { rows, cols, data }));
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(f), tensors).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
