//! Gamma-table text files: one `step_index<TAB>gamma` line per entry.
//! Values print in Rust's shortest round-trip form (at most 9 significant
//! digits for f32), so write-then-read reproduces the map exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regione_core::avd::GammaTable;

use crate::error::{BenchError, Result};

pub fn encode(table: &GammaTable) -> String {
    let mut out = String::new();
    for (step, gamma) in table.entries() {
        writeln!(out, "{step}\t{gamma}").expect("writing to a string cannot fail");
    }
    out
}

pub fn decode(text: &str) -> Result<GammaTable> {
    let mut entries = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (step, gamma) = line.split_once('\t').ok_or_else(|| {
            BenchError::config(format!("gamma table line {}: missing tab", lineno + 1))
        })?;
        let step: usize = step.trim().parse().map_err(|e| {
            BenchError::config(format!("gamma table line {}: bad step: {e}", lineno + 1))
        })?;
        let gamma: f32 = gamma.trim().parse().map_err(|e| {
            BenchError::config(format!("gamma table line {}: bad value: {e}", lineno + 1))
        })?;
        if entries.insert(step, gamma).is_some() {
            return Err(BenchError::config(format!(
                "gamma table line {}: duplicate step {step}",
                lineno + 1
            )));
        }
    }
    GammaTable::calibrated(entries, 0).map_err(|e| BenchError::config(e.to_string()))
}

pub fn write_gamma(path: &Path, table: &GammaTable) -> Result<()> {
    fs::write(path, encode(table))?;
    Ok(())
}

pub fn read_gamma(path: &Path) -> Result<GammaTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::config(format!("gamma table {}: {e}", path.display())))?;
    decode(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_reproduces_the_map() {
        let mut entries = BTreeMap::new();
        entries.insert(1usize, 1.0371429f32);
        entries.insert(2, 0.99999994);
        entries.insert(14, 1.25e-3);
        let table = GammaTable::calibrated(entries.clone(), 3).unwrap();
        let back = decode(&encode(&table)).unwrap();
        assert_eq!(back.entries(), &entries);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(decode("1 1.0").is_err(), "space instead of tab");
        assert!(decode("x\t1.0").is_err());
        assert!(decode("1\tabc").is_err());
        assert!(decode("1\t1.0\n1\t2.0").is_err(), "duplicate step");
        assert!(decode("1\t-2.0").is_err(), "gamma must be positive");
    }

    #[test]
    fn empty_lines_ignored() {
        let table = decode("1\t1.5\n\n2\t0.5\n").unwrap();
        assert_eq!(table.entries().len(), 2);
    }
}
