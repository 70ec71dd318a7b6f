//! Turn a parsed scenario into live model + sequence objects and run them
//! under a wall clock.

use std::time::Instant;

use regione_core::model::analytic::{synthetic_scenario, AnalyticField};
use regione_core::model::toy::{ToyDiT, ToyDiTConfig};
use regione_core::model::{SegmentedSequence, VelocityModel};
use regione_core::partition::{GridMap, RegionMask};
use regione_core::pipeline::{
    partition_preview, record_norm_trace, regione_sample, vanilla_sample, RegionEConfig, RunReport,
};
use regione_core::rng::Rng;
use regione_core::Mat;

use crate::config::{BenchScenario, ModelKind};
use crate::error::{BenchError, Result};

pub enum BuiltModel {
    Toy(ToyDiT),
    Analytic(AnalyticField),
}

impl BuiltModel {
    pub fn as_velocity_model(&self) -> &dyn VelocityModel {
        match self {
            BuiltModel::Toy(m) => m,
            BuiltModel::Analytic(f) => f,
        }
    }
}

pub struct BuiltScenario {
    pub model: BuiltModel,
    pub seq: SegmentedSequence,
    pub cfg: RegionEConfig,
    /// Tokens whose velocity norms calibration tracks: the ground-truth
    /// edited set for analytic scenarios, every noise token for the toy.
    pub tracked_tokens: Vec<usize>,
}

/// Instantiate a scenario with an explicit seed (the config seed unless the
/// command line overrode it).
pub fn build(scenario: &BenchScenario, seed: u64) -> Result<BuiltScenario> {
    let mut cfg = scenario.region_config()?;
    cfg.seed = seed;
    let (h, w, d, n_p) = (
        scenario.grid_height,
        scenario.grid_width,
        scenario.channels,
        scenario.prompt_tokens,
    );
    if h == 0 || w == 0 || d == 0 {
        return Err(BenchError::config(
            "grid and channel sizes must be positive",
        ));
    }
    let grid = GridMap::identity(h, w);
    match scenario.model {
        ModelKind::Analytic => {
            let edited = scenario.edited_flags()?;
            let built = synthetic_scenario(h * w, d, n_p, edited, scenario.curvature, seed)
                .map_err(|e| BenchError::config(e.to_string()))?;
            let tracked: Vec<usize> = built
                .field
                .edited_truth()
                .iter()
                .enumerate()
                .filter_map(|(i, &e)| e.then_some(i))
                .collect();
            let seq = SegmentedSequence::editing(
                built.prompt,
                built.field.x1().clone(),
                built.instruction,
                grid,
            )
            .map_err(|e| BenchError::config(e.to_string()))?;
            Ok(BuiltScenario {
                model: BuiltModel::Analytic(built.field),
                seq,
                cfg,
                tracked_tokens: tracked,
            })
        }
        ModelKind::ToyDit => {
            let toy_cfg = ToyDiTConfig {
                channels: d,
                heads: scenario.toy_heads,
                layers: scenario.toy_layers,
            };
            let model =
                ToyDiT::new(toy_cfg, seed).map_err(|e| BenchError::config(e.to_string()))?;
            let mut rng = Rng::new(seed ^ 0x5851_f42d_4c95_7f2d);
            let prompt = Mat::random_normal(n_p, d, 1.0, &mut rng);
            let noise = Mat::random_normal(h * w, d, 1.0, &mut rng);
            let instruction = Mat::random_normal(h * w, d, 1.0, &mut rng);
            let seq = SegmentedSequence::editing(prompt, noise, instruction, grid)
                .map_err(|e| BenchError::config(e.to_string()))?;
            Ok(BuiltScenario {
                model: BuiltModel::Toy(model),
                seq,
                cfg,
                tracked_tokens: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Vanilla,
    Regione,
}

impl RunMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(RunMode::Vanilla),
            "regione" => Ok(RunMode::Regione),
            other => Err(BenchError::config(format!(
                "unknown mode '{other}' (expected vanilla or regione)"
            ))),
        }
    }
}

/// Execute one run and stamp the measured wall time into the report.
pub fn run_timed(built: &BuiltScenario, mode: RunMode) -> Result<RunReport> {
    let model = built.model.as_velocity_model();
    let start = Instant::now();
    let mut report = match mode {
        RunMode::Vanilla => vanilla_sample(model, &built.seq, &built.cfg)?,
        RunMode::Regione => regione_sample(model, &built.seq, &built.cfg)?,
    };
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mask from the stabilization + partition phases only.
pub fn preview_mask(built: &BuiltScenario) -> Result<RegionMask> {
    Ok(partition_preview(
        built.model.as_velocity_model(),
        &built.seq,
        &built.cfg,
    )?)
}

/// One calibration trace: a vanilla run recording per-step velocity norms
/// over the scenario's tracked tokens.
pub fn calibration_trace(built: &BuiltScenario) -> Result<regione_core::avd::VelocityNormTrace> {
    Ok(record_norm_trace(
        built.model.as_velocity_model(),
        &built.seq,
        &built.cfg,
        &built.tracked_tokens,
    )?)
}
