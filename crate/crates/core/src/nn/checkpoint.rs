//! Binary checkpoint: a version byte, a little-endian `u32` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u32` rows, `u32` cols and
//! `rows * cols` row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u8 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint_to(out: &mut impl Write, tensors: &[(String, Array2<f64>)]) -> std::io::Result<()> {
    out.write_all(&[CHECKPOINT_VERSION])?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.nrows() as u32).to_le_bytes())?;
        out.write_all(&(t.ncols() as u32).to_le_bytes())?;
        for v in t.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(path: impl AsRef<Path>, tensors: &[(String, Array2<f64>)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint_to(&mut buf, tensors).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn take<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(b)
}

fn take_u32(input: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(take::<4>(input)?) as usize)
}

pub fn read_checkpoint_from(input: &mut impl Read) -> Result<Vec<(String, Array2<f64>)>> {
    let [version] = take::<1>(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = take_u32(input)?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = take_u32(input)?;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name).map_err(|_| bad("truncated tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rows = take_u32(input)?;
        let cols = take_u32(input)?;
        let mut values = Vec::with_capacity((rows * cols).min(1 << 20));
        for _ in 0..rows * cols {
            values.push(f64::from_le_bytes(take::<8>(input)?));
        }
        let t = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|_| bad("read failure"))? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Array2<f64>)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(&mut bytes.as_slice())
}
