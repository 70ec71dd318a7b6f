//! Binary tensor files: magic `RGNE`, version byte 1, u32 little-endian
//! rank, u32 dims, then 32-bit little-endian floats in row-major order.

use std::fs;
use std::path::Path;

use regione_core::Mat;

use crate::error::{BenchError, Result};

const MAGIC: &[u8; 4] = b"RGNE";
const VERSION: u8 = 1;

pub fn encode(mat: &Mat) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 1 + 4 + 8 + mat.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(mat.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(mat.cols() as u32).to_le_bytes());
    for v in mat.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Mat> {
    let fail = |msg: &str| BenchError::runtime(format!("tensor file: {msg}"));
    if bytes.len() < 9 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic bytes"));
    }
    if bytes[4] != VERSION {
        return Err(fail(&format!("unsupported version {}", bytes[4])));
    }
    let rank = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if rank != 2 {
        return Err(fail(&format!("expected rank 2, got {rank}")));
    }
    if bytes.len() < 9 + rank * 4 {
        return Err(fail("truncated dims"));
    }
    let rows = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let expected = 17 + rows * cols * 4;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data = bytes[17..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mat::from_vec(rows, cols, data).map_err(|e| BenchError::runtime(e.to_string()))
}

pub fn write_tensor(path: &Path, mat: &Mat) -> Result<()> {
    fs::write(path, encode(mat))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Mat> {
    decode(&fs::read(path)?)
}
