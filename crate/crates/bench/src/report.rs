//! JSON report schema. Every report embeds the fully resolved scenario so a
//! run is reproducible from the report alone; quality and speedup fields are
//! null where no counterpart run exists, and PSNR is null with
//! `identical: true` when the outputs match bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use regione_core::metrics::{mse, psnr_from_mse, speedup, ssim, MetricReport, SsimOptions};
use regione_core::pipeline::{RunReport, StepRecord};
use regione_core::Mat;

use crate::config::BenchScenario;
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonStepRecord {
    pub step_index: usize,
    pub stage: String,
    pub kind: String,
    pub model_tokens: u64,
}

impl From<&StepRecord> for JsonStepRecord {
    fn from(r: &StepRecord) -> Self {
        JsonStepRecord {
            step_index: r.step_index,
            stage: r.stage.name().to_string(),
            kind: r.kind.name().to_string(),
            model_tokens: r.model_tokens,
        }
    }
}

pub type ConfigJson = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JsonReport {
    pub psnr_db: Option<f64>,
    /// True when the compared outputs are bit-identical (PSNR undefined).
    pub identical: Option<bool>,
    pub ssim: Option<f64>,
    /// Not computed at this scale; kept for schema parity.
    pub lpips: Option<f64>,
    pub token_steps_vanilla: u64,
    pub token_steps_actual: u64,
    pub token_step_speedup: Option<f64>,
    pub wall_seconds: f64,
    pub wall_speedup: Option<f64>,
    pub full_forwards: usize,
    pub region_forwards: usize,
    pub cached_steps: usize,
    pub mask_edited_fraction: Option<f64>,
    pub step_log: Vec<JsonStepRecord>,
    pub config: ConfigJson,
}

pub fn config_json(scenario: &BenchScenario) -> ConfigJson {
    scenario
        .to_sections()
        .into_iter()
        .map(|(section, keys)| {
            (
                section.to_string(),
                keys.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            )
        })
        .collect()
}

/// Report for a single run (no counterpart to compare against).
pub fn single_run_report(report: &RunReport, scenario: &BenchScenario) -> JsonReport {
    JsonReport {
        psnr_db: None,
        identical: None,
        ssim: None,
        lpips: None,
        token_steps_vanilla: report.token_steps_vanilla,
        token_steps_actual: report.token_steps_actual,
        token_step_speedup: None,
        wall_seconds: report.wall_seconds,
        wall_speedup: None,
        full_forwards: report.full_forward_count,
        region_forwards: report.region_forward_count,
        cached_steps: report.cached_step_count,
        mask_edited_fraction: report.mask.as_ref().map(|m| m.edited_fraction()),
        step_log: report.step_log.iter().map(JsonStepRecord::from).collect(),
        config: config_json(scenario),
    }
}

/// Quality and speedup summary of an accelerated run against its baseline.
/// SSIM treats the latent as per-channel grid images; None when the grid is
/// smaller than the window. Wall speedup is None when no clock ran.
pub fn metric_report(
    fast: &RunReport,
    base: &RunReport,
    scenario: &BenchScenario,
) -> Result<(MetricReport, Option<f64>)> {
    let err = mse(&fast.final_latent, &base.final_latent)
        .map_err(|e| BenchError::runtime(e.to_string()))?;
    let psnr_db =
        psnr_from_mse(err, scenario.data_range).map_err(|e| BenchError::runtime(e.to_string()))?;
    let ssim_value = latent_grid_ssim(
        &fast.final_latent,
        &base.final_latent,
        scenario.grid_height,
        scenario.grid_width,
        scenario.data_range,
    )?;
    let (token_step_speedup, wall_speedup) = if fast.wall_seconds > 0.0 {
        speedup(fast, base).map_err(|e| BenchError::runtime(e.to_string()))?
    } else {
        if fast.token_steps_actual == 0 {
            return Err(BenchError::runtime("run recorded zero token-steps"));
        }
        (
            base.token_steps_actual as f64 / fast.token_steps_actual as f64,
            f64::NAN,
        )
    };
    Ok((
        MetricReport {
            psnr_db,
            ssim: ssim_value.unwrap_or(f64::NAN),
            token_step_speedup,
            wall_speedup,
        },
        ssim_value,
    ))
}

/// Comparison report: the accelerated run's accounting plus quality metrics
/// against the baseline.
pub fn compare_report(
    fast: &RunReport,
    base: &RunReport,
    scenario: &BenchScenario,
) -> Result<JsonReport> {
    let (metrics, ssim_value) = metric_report(fast, base, scenario)?;
    let identical = metrics.psnr_db.is_infinite();
    Ok(JsonReport {
        psnr_db: (!identical).then_some(metrics.psnr_db),
        identical: Some(identical),
        ssim: ssim_value,
        lpips: None,
        token_steps_vanilla: fast.token_steps_vanilla,
        token_steps_actual: fast.token_steps_actual,
        token_step_speedup: Some(metrics.token_step_speedup),
        wall_seconds: fast.wall_seconds,
        wall_speedup: metrics
            .wall_speedup
            .is_finite()
            .then_some(metrics.wall_speedup),
        full_forwards: fast.full_forward_count,
        region_forwards: fast.region_forward_count,
        cached_steps: fast.cached_step_count,
        mask_edited_fraction: fast.mask.as_ref().map(|m| m.edited_fraction()),
        step_log: fast.step_log.iter().map(JsonStepRecord::from).collect(),
        config: config_json(scenario),
    })
}

/// Mean SSIM over channels, viewing a [tokens x channels] latent as
/// `channels` images on the token grid. None when the grid is too small for
/// the window.
fn latent_grid_ssim(a: &Mat, b: &Mat, h: usize, w: usize, data_range: f64) -> Result<Option<f64>> {
    let opts = SsimOptions {
        data_range,
        ..SsimOptions::default()
    };
    if a.rows() != h * w || b.rows() != h * w {
        return Err(BenchError::runtime(format!(
            "latent has {} rows, grid is {h}x{w}",
            a.rows()
        )));
    }
    if h < opts.window || w < opts.window {
        return Ok(None);
    }
    let channels = a.cols();
    let mut total = 0.0;
    for ch in 0..channels {
        let img_a = Mat::from_fn(h, w, |r, c| a.get(r * w + c, ch));
        let img_b = Mat::from_fn(h, w, |r, c| b.get(r * w + c, ch));
        total += ssim(&img_a, &img_b, &opts).map_err(|e| BenchError::runtime(e.to_string()))?;
    }
    Ok(Some(total / channels as f64))
}

pub fn write_json(path: &Path, report: &JsonReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| BenchError::runtime(format!("serializing report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<JsonReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| BenchError::runtime(format!("parsing report: {e}")))
}
