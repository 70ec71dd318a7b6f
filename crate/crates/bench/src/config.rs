//! Scenario configuration: a flat INI-style text file with one section per
//! concern. Parsing is strict (unknown keys are errors) and writing emits
//! every resolved field, so parse(write(s)) == s.
//!
//! ```text
//! [scenario]
//! model = analytic            # or: toy-dit
//! seed = 7
//! grid_height = 16
//! grid_width = 16
//! channels = 8
//! prompt_tokens = 8
//! curvature = 0.1
//! edited_top = 0
//! edited_left = 0
//! edited_height = 16
//! edited_width = 8
//!
//! [toy]
//! layers = 4
//! heads = 4
//!
//! [schedule]
//! steps = 28
//! kind = uniform              # or: shifted
//! shift = 3.0
//!
//! [pipeline]
//! stabilization_steps = 6
//! smooth_steps = 2
//! forced_steps = 16           # comma-separated, may be empty
//! eta = 0.88
//! delta = 0.02
//! cfg_scale = none            # or a number
//! se_radius = 1
//! se_iterations = 1
//! gamma = unit                # or: file:<path>
//!
//! [output]
//! dir = regione-out
//! data_range = 1.0
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use regione_core::avd::GammaTable;
use regione_core::pipeline::RegionEConfig;
use regione_core::schedule::ScheduleKind;

use crate::error::{BenchError, Result};
use crate::gamma_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ToyDit,
    Analytic,
}

impl ModelKind {
    fn as_str(self) -> &'static str {
        match self {
            ModelKind::ToyDit => "toy-dit",
            ModelKind::Analytic => "analytic",
        }
    }
}

/// Ground-truth edited rectangle for analytic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditedBlock {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Where the gamma table comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GammaRef {
    Unit,
    File(String),
}

/// One fully resolved benchmark scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchScenario {
    pub model: ModelKind,
    pub seed: u64,
    pub grid_height: usize,
    pub grid_width: usize,
    pub channels: usize,
    pub prompt_tokens: usize,
    /// How far edited-token controls sit from the straight-line midpoint.
    pub curvature: f32,
    pub edited_block: EditedBlock,
    pub toy_layers: usize,
    pub toy_heads: usize,
    pub steps: usize,
    pub schedule_kind: String,
    pub schedule_shift: f64,
    pub stabilization_steps: usize,
    pub smooth_steps: usize,
    pub forced_steps: Vec<usize>,
    pub eta: f32,
    pub delta: f64,
    pub cfg_scale: Option<f32>,
    pub se_radius: usize,
    pub se_iterations: usize,
    pub gamma: GammaRef,
    pub out_dir: String,
    pub data_range: f64,
}

impl Default for BenchScenario {
    fn default() -> Self {
        BenchScenario {
            model: ModelKind::ToyDit,
            seed: 0,
            grid_height: 16,
            grid_width: 16,
            channels: 64,
            prompt_tokens: 8,
            curvature: 0.1,
            edited_block: EditedBlock {
                top: 0,
                left: 0,
                height: 16,
                width: 8,
            },
            toy_layers: 4,
            toy_heads: 4,
            steps: 28,
            schedule_kind: "uniform".to_string(),
            schedule_shift: 3.0,
            stabilization_steps: 6,
            smooth_steps: 2,
            forced_steps: vec![16],
            eta: 0.88,
            delta: 0.02,
            cfg_scale: None,
            se_radius: 1,
            se_iterations: 1,
            gamma: GammaRef::Unit,
            out_dir: "regione-out".to_string(),
            data_range: 1.0,
        }
    }
}

impl BenchScenario {
    pub fn schedule_kind(&self) -> Result<ScheduleKind> {
        match self.schedule_kind.as_str() {
            "uniform" => Ok(ScheduleKind::Uniform),
            "shifted" => Ok(ScheduleKind::Shifted(self.schedule_shift)),
            other => Err(BenchError::config(format!(
                "unknown schedule kind '{other}' (expected uniform or shifted)"
            ))),
        }
    }

    /// Resolve the gamma reference (reading the referenced file if any).
    pub fn gamma_table(&self) -> Result<GammaTable> {
        match &self.gamma {
            GammaRef::Unit => Ok(GammaTable::unit()),
            GammaRef::File(path) => gamma_file::read_gamma(Path::new(path)),
        }
    }

    /// Assemble the pipeline configuration this scenario describes.
    pub fn region_config(&self) -> Result<RegionEConfig> {
        let cfg = RegionEConfig {
            steps: self.steps,
            stabilization_steps: self.stabilization_steps,
            smooth_steps: self.smooth_steps,
            forced_steps: self.forced_steps.clone(),
            eta: self.eta,
            delta: self.delta,
            gamma: self.gamma_table()?,
            cfg_scale: self.cfg_scale,
            se_radius: self.se_radius,
            se_iterations: self.se_iterations,
            schedule_kind: self.schedule_kind()?,
            seed: self.seed,
        };
        Ok(cfg)
    }

    /// Ground-truth edited flags over the token grid, row-major.
    pub fn edited_flags(&self) -> Result<Vec<bool>> {
        let b = self.edited_block;
        if b.top + b.height > self.grid_height || b.left + b.width > self.grid_width {
            return Err(BenchError::config(format!(
                "edited block {}x{} at ({}, {}) exceeds the {}x{} grid",
                b.height, b.width, b.top, b.left, self.grid_height, self.grid_width
            )));
        }
        let (h, w) = (self.grid_height, self.grid_width);
        Ok((0..h * w)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                r >= b.top && r < b.top + b.height && c >= b.left && c < b.left + b.width
            })
            .collect())
    }

    /// Sections and keys in canonical order, the single source of truth for
    /// both the INI writer and the JSON config embed.
    pub fn to_sections(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        vec![
            (
                "scenario",
                vec![
                    ("model", self.model.as_str().to_string()),
                    ("seed", self.seed.to_string()),
                    ("grid_height", self.grid_height.to_string()),
                    ("grid_width", self.grid_width.to_string()),
                    ("channels", self.channels.to_string()),
                    ("prompt_tokens", self.prompt_tokens.to_string()),
                    ("curvature", self.curvature.to_string()),
                    ("edited_top", self.edited_block.top.to_string()),
                    ("edited_left", self.edited_block.left.to_string()),
                    ("edited_height", self.edited_block.height.to_string()),
                    ("edited_width", self.edited_block.width.to_string()),
                ],
            ),
            (
                "toy",
                vec![
                    ("layers", self.toy_layers.to_string()),
                    ("heads", self.toy_heads.to_string()),
                ],
            ),
            (
                "schedule",
                vec![
                    ("steps", self.steps.to_string()),
                    ("kind", self.schedule_kind.clone()),
                    ("shift", self.schedule_shift.to_string()),
                ],
            ),
            (
                "pipeline",
                vec![
                    ("stabilization_steps", self.stabilization_steps.to_string()),
                    ("smooth_steps", self.smooth_steps.to_string()),
                    (
                        "forced_steps",
                        self.forced_steps
                            .iter()
                            .map(|s| s.to_string())
                            .collect::<Vec<_>>()
                            .join(","),
                    ),
                    ("eta", self.eta.to_string()),
                    ("delta", self.delta.to_string()),
                    (
                        "cfg_scale",
                        self.cfg_scale
                            .map(|s| s.to_string())
                            .unwrap_or_else(|| "none".to_string()),
                    ),
                    ("se_radius", self.se_radius.to_string()),
                    ("se_iterations", self.se_iterations.to_string()),
                    (
                        "gamma",
                        match &self.gamma {
                            GammaRef::Unit => "unit".to_string(),
                            GammaRef::File(p) => format!("file:{p}"),
                        },
                    ),
                ],
            ),
            (
                "output",
                vec![
                    ("dir", self.out_dir.clone()),
                    ("data_range", self.data_range.to_string()),
                ],
            ),
        ]
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        for (section, keys) in self.to_sections() {
            writeln!(out, "[{section}]").unwrap();
            for (key, value) in keys {
                writeln!(out, "{key} = {value}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ini(text: &str) -> Result<Self> {
        let mut scenario = BenchScenario::default();
        let mut section = String::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| BenchError::config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at("unterminated section header".to_string()))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at("expected key = value".to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let full = format!("{section}.{key}");
            if seen.insert(full.clone(), ()).is_some() {
                return Err(at(format!("duplicate key {full}")));
            }
            apply_key(&mut scenario, &section, key, value)
                .map_err(|e| at(format!("{full}: {e}")))?;
        }
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| BenchError::config(format!("config {}: {e}", path.display())))?;
        Self::from_ini(&text)
    }
}

fn apply_key(s: &mut BenchScenario, section: &str, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| BenchError::config(format!("{e}")))
    }

    match (section, key) {
        ("scenario", "model") => {
            s.model = match value {
                "toy-dit" => ModelKind::ToyDit,
                "analytic" => ModelKind::Analytic,
                other => {
                    return Err(BenchError::config(format!(
                        "unknown model '{other}' (expected toy-dit or analytic)"
                    )))
                }
            };
        }
        ("scenario", "seed") => s.seed = parse(value)?,
        ("scenario", "grid_height") => s.grid_height = parse(value)?,
        ("scenario", "grid_width") => s.grid_width = parse(value)?,
        ("scenario", "channels") => s.channels = parse(value)?,
        ("scenario", "prompt_tokens") => s.prompt_tokens = parse(value)?,
        ("scenario", "curvature") => s.curvature = parse(value)?,
        ("scenario", "edited_top") => s.edited_block.top = parse(value)?,
        ("scenario", "edited_left") => s.edited_block.left = parse(value)?,
        ("scenario", "edited_height") => s.edited_block.height = parse(value)?,
        ("scenario", "edited_width") => s.edited_block.width = parse(value)?,
        ("toy", "layers") => s.toy_layers = parse(value)?,
        ("toy", "heads") => s.toy_heads = parse(value)?,
        ("schedule", "steps") => s.steps = parse(value)?,
        ("schedule", "kind") => s.schedule_kind = value.to_string(),
        ("schedule", "shift") => s.schedule_shift = parse(value)?,
        ("pipeline", "stabilization_steps") => s.stabilization_steps = parse(value)?,
        ("pipeline", "smooth_steps") => s.smooth_steps = parse(value)?,
        ("pipeline", "forced_steps") => {
            s.forced_steps = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|v| parse(v.trim()))
                    .collect::<Result<Vec<usize>>>()?
            };
        }
        ("pipeline", "eta") => s.eta = parse(value)?,
        ("pipeline", "delta") => s.delta = parse(value)?,
        ("pipeline", "cfg_scale") => {
            s.cfg_scale = if value == "none" {
                None
            } else {
                Some(parse(value)?)
            };
        }
        ("pipeline", "se_radius") => s.se_radius = parse(value)?,
        ("pipeline", "se_iterations") => s.se_iterations = parse(value)?,
        ("pipeline", "gamma") => {
            s.gamma = if value == "unit" {
                GammaRef::Unit
            } else if let Some(path) = value.strip_prefix("file:") {
                GammaRef::File(path.to_string())
            } else {
                return Err(BenchError::config(
                    "expected 'unit' or 'file:<path>'".to_string(),
                ));
            };
        }
        ("output", "dir") => s.out_dir = value.to_string(),
        ("output", "data_range") => s.data_range = parse(value)?,
        _ => {
            return Err(BenchError::config(format!(
                "unknown key '{key}' in section [{section}]"
            )))
        }
    }
    Ok(())
}
