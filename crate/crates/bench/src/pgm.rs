//! Mask export as binary PGM (P5, maxval 255): edited = 255, unedited = 0.

use std::fs;
use std::path::Path;

use regione_core::partition::RegionMask;

use crate::error::{BenchError, Result};

pub fn encode(mask: &RegionMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.grid().iter().map(|&e| if e { 255u8 } else { 0 }));
    out
}

pub fn write_mask(path: &Path, mask: &RegionMask) -> Result<()> {
    fs::write(path, encode(mask))?;
    Ok(())
}

/// Parse a P5 file produced by [`encode`]; used by tests and tooling.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let fail = |msg: &str| BenchError::runtime(format!("pgm: {msg}"));
    let header_end = bytes
        .windows(1)
        .enumerate()
        .filter(|(_, w)| w[0] == b'\n')
        .map(|(i, _)| i)
        .nth(2)
        .ok_or_else(|| fail("truncated header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| fail("non-utf8 header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("P5") {
        return Err(fail("not a P5 file"));
    }
    let dims = lines.next().ok_or_else(|| fail("missing dimensions"))?;
    let (w, h) = dims
        .split_once(' ')
        .ok_or_else(|| fail("bad dimension line"))?;
    let (w, h): (usize, usize) = (
        w.trim().parse().map_err(|_| fail("bad width"))?,
        h.trim().parse().map_err(|_| fail("bad height"))?,
    );
    if lines.next() != Some("255") {
        return Err(fail("expected maxval 255"));
    }
    let pixels = &bytes[header_end + 1..];
    if pixels.len() != w * h {
        return Err(fail("pixel payload size mismatch"));
    }
    Ok((h, w, pixels.iter().map(|&p| p >= 128).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let grid = vec![true, false, false, true, true, false];
        let mask = RegionMask::from_grid(grid.clone(), 2, 3, 0.8).unwrap();
        let bytes = encode(&mask);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let (h, w, back) = decode(&bytes).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, grid);
    }
}
