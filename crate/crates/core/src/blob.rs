//! Raw little-endian numeric blobs.

use std::fs;
use std::path::Path;

use crate::error::{EitError, Result};

fn check(path: &Path, bytes: usize, width: usize, expected: Option<usize>) -> Result<usize> {
    if bytes % width != 0 {
        return Err(EitError::Format(format!("{}: {bytes} bytes is not a multiple of {width}", path.display())));
    }
    let n = bytes / width;
    if let Some(e) = expected {
        if e != n {
            return Err(EitError::Format(format!("{}: expected {e} values, found {n}", path.display())));
        }
    }
    Ok(n)
}

pub fn write_f64(path: &Path, v: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_f32(path: &Path, v: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_u32(path: &Path, v: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64(path: &Path, expected: Option<usize>) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    check(path, bytes.len(), 8, expected)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read_f32(path: &Path, expected: Option<usize>) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    check(path, bytes.len(), 4, expected)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn read_u32(path: &Path, expected: Option<usize>) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    check(path, bytes.len(), 4, expected)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}
