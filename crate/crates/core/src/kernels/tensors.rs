//! Named-tensor container for model parameters.
//!
//! Layout (all integers little-endian): magic `SVT1`, `u32` tensor count, then
//! per tensor a `u16` name length, UTF-8 name, `u32` rank, `rank × u32`
//! dimensions and the row-major values as `f32`.

use std::io::{Read, Write};
use std::path::Path;

use super::params::Parameters;
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"SVT1";

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Snapshot of a parameter set with names prefixed by `prefix`.
pub fn collect<P: Parameters>(params: &P, prefix: &str) -> Vec<StoredTensor> {
    params
        .tensors()
        .iter()
        .map(|t| StoredTensor {
            name: t.full_name(prefix),
            shape: t.shape.to_vec(),
            values: t.data.iter().map(|&v| v as f32).collect(),
        })
        .collect()
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[StoredTensor]) -> std::io::Result<()> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, m);
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(invalid(format!("tensor `{}` shape does not match its values", t.name)));
        }
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| invalid(format!("name `{}` too long", t.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<StoredTensor>> {
    let mut read = |buf: &mut [u8], record: usize| {
        r.read_exact(buf).map_err(|e| Error::Record { record, message: format!("truncated tensor file: {e}") })
    };
    let mut magic = [0u8; 4];
    read(&mut magic, 0)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Record { record: 0, message: "bad magic, expected \"SVT1\"".into() });
    }
    let mut word = [0u8; 4];
    read(&mut word, 0)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut out = Vec::with_capacity(count);
    for i in 1..=count {
        let mut len = [0u8; 2];
        read(&mut len, i)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        read(&mut name, i)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Record { record: i, message: "name is not UTF-8".into() })?;
        read(&mut word, i)?;
        let rank = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            read(&mut word, i)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read(&mut raw, i)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(StoredTensor { name, shape, values });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[StoredTensor]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<StoredTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensors(bytes.as_slice())
}
