//! Toy-model weight snapshots: one binary tensor file per parameter plus a
//! `manifest.tsv` listing `name<TAB>rows<TAB>cols<TAB>file`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regione_core::model::toy::ToyDiT;
use regione_core::Mat;

use crate::error::{BenchError, Result};
use crate::tensor_file;

pub const MANIFEST: &str = "manifest.tsv";

pub fn save_weights(dir: &Path, model: &ToyDiT) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, mat) in model.named_parameters() {
        let file = format!("{}.tensor", name.replace('.', "_"));
        tensor_file::write_tensor(&dir.join(&file), mat)?;
        writeln!(manifest, "{name}\t{}\t{}\t{file}", mat.rows(), mat.cols())
            .expect("writing to a string cannot fail");
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Load a snapshot back as named tensors, verifying shapes against the
/// manifest.
pub fn load_weights(dir: &Path) -> Result<Vec<(String, Mat)>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| BenchError::runtime(format!("weight manifest: {e}")))?;
    let mut out = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(BenchError::runtime(format!(
                "weight manifest line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let rows: usize = fields[1]
            .parse()
            .map_err(|_| BenchError::runtime("bad manifest rows".to_string()))?;
        let cols: usize = fields[2]
            .parse()
            .map_err(|_| BenchError::runtime("bad manifest cols".to_string()))?;
        let mat = tensor_file::read_tensor(&dir.join(fields[3]))?;
        if mat.rows() != rows || mat.cols() != cols {
            return Err(BenchError::runtime(format!(
                "weight {}: file is {}x{}, manifest says {rows}x{cols}",
                fields[0],
                mat.rows(),
                mat.cols()
            )));
        }
        out.push((fields[0].to_string(), mat));
    }
    Ok(out)
}
