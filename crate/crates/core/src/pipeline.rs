//! Staged region-aware sampling and the vanilla baseline.
//!
//! A run has three phases:
//!
//! 1. Stabilization: plain full-sequence denoising while the velocity
//!    estimates settle; the last forward also snapshots every attention
//!    layer's K/V.
//! 2. Region-aware generation: the noise tokens are partitioned once into
//!    edited and unedited regions. Between consecutive forced-update steps,
//!    unedited tokens advance by a single straight-line jump while edited
//!    tokens iterate through region-restricted forwards (cached K/V spliced
//!    in) gated by the decayed velocity cache. Each segment ends with a
//!    gather and one full forward that refreshes both caches.
//! 3. Smooth: a few plain full steps over the merged image to blend the
//!    region boundary.
//!
//! Token-step accounting (tokens processed per model call, doubled under
//! classifier-free guidance) is the hardware-independent compute proxy the
//! reports are built on.

use alloc::vec::Vec;

use crate::avd::{decide_and_velocity, CacheDecision, GammaTable, VelocityCacheState};
use crate::error::{invalid_arg, invalid_config, Result};
use crate::model::{cfg_combine, SegmentedSequence, VelocityModel};
use crate::partition::{adaptive_region_partition, RegionMask};
use crate::rikv::{snapshot, FullSequenceKv, KVStore};
use crate::schedule::{euler_step, make_schedule, LatentState, ScheduleKind, TimestepSchedule};
use crate::tensor::Mat;

/// Every knob of a region-aware run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEConfig {
    /// Total sampling steps T.
    pub steps: usize,
    /// Full steps before the partition is drawn.
    pub stabilization_steps: usize,
    /// Full steps after the final gather.
    pub smooth_steps: usize,
    /// Forced full-update steps, strictly descending, each strictly between
    /// the smooth and stabilization boundaries.
    pub forced_steps: Vec<usize>,
    /// Partition threshold: a token is unedited iff its similarity > eta.
    pub eta: f32,
    /// Cache staleness threshold for the decayed velocity cache.
    pub delta: f64,
    pub gamma: GammaTable,
    /// Guidance scale; None disables the unconditional branch.
    pub cfg_scale: Option<f32>,
    pub se_radius: usize,
    pub se_iterations: usize,
    pub schedule_kind: ScheduleKind,
    /// Scenario seed, carried for reporting; the pipeline itself draws no
    /// randomness.
    pub seed: u64,
}

impl Default for RegionEConfig {
    fn default() -> Self {
        RegionEConfig {
            steps: 28,
            stabilization_steps: 6,
            smooth_steps: 2,
            forced_steps: alloc::vec![16],
            eta: 0.88,
            delta: 0.02,
            gamma: GammaTable::unit(),
            cfg_scale: None,
            se_radius: 1,
            se_iterations: 1,
            schedule_kind: ScheduleKind::Uniform,
            seed: 0,
        }
    }
}

impl RegionEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid_config!("step count must be at least 1"));
        }
        if self.stabilization_steps == 0 || self.smooth_steps == 0 {
            return Err(invalid_config!(
                "stabilization and smooth stages each need at least one step"
            ));
        }
        if self.stabilization_steps + self.smooth_steps >= self.steps {
            return Err(invalid_config!(
                "stages use {} + {} steps, leaving none of {} for region generation",
                self.stabilization_steps,
                self.smooth_steps,
                self.steps
            ));
        }
        let lo = self.smooth_steps - 1;
        let hi = self.steps - self.stabilization_steps;
        let mut prev = usize::MAX;
        for &f in &self.forced_steps {
            if f <= lo || f >= hi {
                return Err(invalid_config!(
                    "forced step {f} outside the open interval ({lo}, {hi})"
                ));
            }
            if f >= prev {
                return Err(invalid_config!(
                    "forced steps must be strictly descending, got {f} after {prev}"
                ));
            }
            prev = f;
        }
        if self.delta < 0.0 || !self.delta.is_finite() {
            return Err(invalid_config!("delta must be a nonnegative number"));
        }
        if let ScheduleKind::Shifted(shift) = self.schedule_kind {
            if shift <= 0.0 || !shift.is_finite() {
                return Err(invalid_config!("schedule shift must be positive"));
            }
        }
        Ok(())
    }

    /// Forced list with both stage boundaries attached:
    /// [T - t_st, forced..., t_sm - 1].
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.forced_steps.len() + 2);
        out.push(self.steps - self.stabilization_steps);
        out.extend_from_slice(&self.forced_steps);
        out.push(self.smooth_steps - 1);
        out
    }

    pub fn schedule(&self) -> Result<TimestepSchedule> {
        make_schedule(self.steps, self.schedule_kind)
    }
}

/// Pipeline phase a step log entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Vanilla,
    Stabilization,
    RegionAware,
    Smooth,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Vanilla => "vanilla",
            Stage::Stabilization => "stabilization",
            Stage::RegionAware => "region_aware",
            Stage::Smooth => "smooth",
        }
    }
}

/// What happened at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Full-sequence model forward.
    Full,
    /// Region-restricted forward over prompt + edited rows.
    Region,
    /// Edited-region step served from the decayed velocity cache.
    Cached,
    /// Unedited tokens advanced by a single straight-line jump (no model).
    UneditedJump,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Full => "full",
            StepKind::Region => "region",
            StepKind::Cached => "cached",
            StepKind::UneditedJump => "unedited_jump",
        }
    }
}

/// One entry of the per-run step log. `model_tokens` counts tokens processed
/// by the model at this step (0 for cached steps and jumps), already
/// including the guidance doubling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub step_index: usize,
    pub stage: Stage,
    pub kind: StepKind,
    pub model_tokens: u64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub final_latent: Mat,
    pub mask: Option<RegionMask>,
    pub full_forward_count: usize,
    pub region_forward_count: usize,
    pub cached_step_count: usize,
    /// Token-steps a vanilla run over the same sequence costs.
    pub token_steps_vanilla: u64,
    /// Token-steps this run actually spent.
    pub token_steps_actual: u64,
    /// Filled in by callers that can measure time; 0 where no clock exists.
    pub wall_seconds: f64,
    pub step_log: Vec<StepRecord>,
}

impl RunReport {
    /// Recompute the actual token-steps from the log; always equals
    /// `token_steps_actual`.
    pub fn token_steps_from_log(&self) -> u64 {
        self.step_log.iter().map(|r| r.model_tokens).sum()
    }
}

/// Write edited and unedited rows back to their token positions. Every row
/// of the output is written exactly once.
pub fn scatter_rows(edited: &Mat, unedited: &Mat, mask: &RegionMask) -> Result<Mat> {
    if edited.rows() != mask.edited_index().len() {
        return Err(invalid_arg!(
            "{} edited rows for {} edited tokens",
            edited.rows(),
            mask.edited_index().len()
        ));
    }
    if unedited.rows() != mask.unedited_index().len() {
        return Err(invalid_arg!(
            "{} unedited rows for {} unedited tokens",
            unedited.rows(),
            mask.unedited_index().len()
        ));
    }
    let cols = if edited.rows() > 0 {
        edited.cols()
    } else {
        unedited.cols()
    };
    if (edited.rows() > 0 && edited.cols() != cols)
        || (unedited.rows() > 0 && unedited.cols() != cols)
    {
        return Err(invalid_arg!("scatter parts disagree on channel count"));
    }
    let mut out = Mat::zeros(mask.len(), cols);
    for (r, &token) in mask.edited_index().iter().enumerate() {
        out.row_mut(token).copy_from_slice(edited.row(r));
    }
    for (r, &token) in mask.unedited_index().iter().enumerate() {
        out.row_mut(token).copy_from_slice(unedited.row(r));
    }
    Ok(out)
}

/// Raw per-branch K/V of the most recent storing forward.
struct BranchKv {
    cond: FullSequenceKv,
    uncond: Option<FullSequenceKv>,
}

/// Sliced per-branch stores ready for region forwards.
struct BranchStores {
    cond: KVStore,
    uncond: Option<KVStore>,
}

impl BranchKv {
    fn slice(&self, mask: &RegionMask, step: usize) -> Result<BranchStores> {
        Ok(BranchStores {
            cond: snapshot(&self.cond, mask, step)?,
            uncond: self
                .uncond
                .as_ref()
                .map(|kv| snapshot(kv, mask, step))
                .transpose()?,
        })
    }
}

/// Drives the model, handling the optional guidance branch uniformly: every
/// invocation doubles (conditional + zero-prompt unconditional) and the
/// combined velocity is what flows onward.
struct Evaluator<'a> {
    model: &'a dyn VelocityModel,
    cfg_scale: Option<f32>,
}

impl<'a> Evaluator<'a> {
    fn branches(&self) -> u64 {
        if self.cfg_scale.is_some() {
            2
        } else {
            1
        }
    }

    fn full(
        &self,
        seq: &SegmentedSequence,
        t: f32,
        store_kv: bool,
    ) -> Result<(Mat, Option<BranchKv>)> {
        let out = self.model.full_forward(seq, t, store_kv)?;
        match self.cfg_scale {
            None => {
                let kv = out.kv_snapshot.map(|cond| BranchKv { cond, uncond: None });
                Ok((out.velocity, kv))
            }
            Some(scale) => {
                let uncond_seq = seq.with_prompt_zeroed();
                let uncond = self.model.full_forward(&uncond_seq, t, store_kv)?;
                let v = cfg_combine(&out.velocity, &uncond.velocity, scale)?;
                let kv = match (out.kv_snapshot, uncond.kv_snapshot) {
                    (Some(cond), Some(u)) => Some(BranchKv {
                        cond,
                        uncond: Some(u),
                    }),
                    _ => None,
                };
                Ok((v, kv))
            }
        }
    }

    fn region(
        &self,
        prompt: &Mat,
        edited: &Mat,
        edited_index: &[usize],
        t: f32,
        stores: &BranchStores,
    ) -> Result<Mat> {
        let v_cond = self
            .model
            .region_forward(prompt, edited, edited_index, t, &stores.cond)?;
        match self.cfg_scale {
            None => Ok(v_cond),
            Some(scale) => {
                let store_u = stores.uncond.as_ref().ok_or_else(|| {
                    crate::error::Error::CacheMiss(alloc::string::String::from(
                        "guidance enabled but no unconditional key/value snapshot",
                    ))
                })?;
                let zero_prompt = Mat::zeros(prompt.rows(), prompt.cols());
                let v_uncond =
                    self.model
                        .region_forward(&zero_prompt, edited, edited_index, t, store_u)?;
                cfg_combine(&v_cond, &v_uncond, scale)
            }
        }
    }
}

impl SegmentedSequence {
    fn with_prompt_zeroed(&self) -> SegmentedSequence {
        let mut out = self.clone();
        out.prompt = Mat::zeros(self.prompt.rows(), self.prompt.cols());
        out
    }
}

fn vanilla_loop(
    model: &dyn VelocityModel,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
    mut observe: impl FnMut(usize, &Mat),
) -> Result<RunReport> {
    // The baseline ignores staging: only the step count and schedule matter.
    if cfg.steps == 0 {
        return Err(invalid_config!("step count must be at least 1"));
    }
    let schedule = cfg.schedule()?;
    let eval = Evaluator {
        model,
        cfg_scale: cfg.cfg_scale,
    };
    let full_tokens = seq.total_len() as u64 * eval.branches();
    let mut state = LatentState::new(seq.noise.clone(), cfg.steps);
    let mut log = Vec::with_capacity(cfg.steps);
    while state.step_index > 0 {
        let i = state.step_index;
        let t = schedule.t(i) as f32;
        let (v, _) = eval.full(&seq.with_noise(state.data.clone())?, t, false)?;
        observe(i, &v);
        state = euler_step(&state, &v, &schedule)?;
        log.push(StepRecord {
            step_index: i,
            stage: Stage::Vanilla,
            kind: StepKind::Full,
            model_tokens: full_tokens,
        });
    }
    let token_steps = full_tokens * cfg.steps as u64;
    Ok(RunReport {
        final_latent: state.data,
        mask: None,
        full_forward_count: cfg.steps,
        region_forward_count: 0,
        cached_step_count: 0,
        token_steps_vanilla: token_steps,
        token_steps_actual: token_steps,
        wall_seconds: 0.0,
        step_log: log,
    })
}

/// Plain T-step Euler sampling; the baseline every comparison runs against.
pub fn vanilla_sample(
    model: &dyn VelocityModel,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
) -> Result<RunReport> {
    vanilla_loop(model, seq, cfg, |_, _| {})
}

/// Vanilla run that records the per-step L2 norm of the velocity restricted
/// to `tracked_tokens` (all noise tokens when empty), for gamma calibration.
pub fn record_norm_trace(
    model: &dyn VelocityModel,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
    tracked_tokens: &[usize],
) -> Result<crate::avd::VelocityNormTrace> {
    let mut norms = Vec::with_capacity(cfg.steps);
    vanilla_loop(model, seq, cfg, |_, v| {
        let norm = if tracked_tokens.is_empty() {
            v.l2_norm()
        } else {
            v.select_rows(tracked_tokens).l2_norm()
        };
        norms.push(norm);
    })?;
    Ok(crate::avd::VelocityNormTrace::new(norms))
}

/// Stabilization phase: full steps from T down to T - t_st + 1, storing the
/// K/V snapshot at the last one. Returns the state at index T - t_st, the
/// last full velocity, and the raw snapshot.
fn run_stabilization(
    eval: &Evaluator<'_>,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
    schedule: &TimestepSchedule,
    log: &mut Vec<StepRecord>,
) -> Result<(LatentState, Mat, BranchKv)> {
    let full_tokens = seq.total_len() as u64 * eval.branches();
    let mut state = LatentState::new(seq.noise.clone(), cfg.steps);
    let last_sts = cfg.steps - cfg.stabilization_steps + 1;
    let mut last_velocity = None;
    let mut kv = None;
    while state.step_index >= last_sts {
        let i = state.step_index;
        let store = i == last_sts;
        let (v, raw) = eval.full(
            &seq.with_noise(state.data.clone())?,
            schedule.t(i) as f32,
            store,
        )?;
        if store {
            kv = raw;
        }
        state = euler_step(&state, &v, schedule)?;
        last_velocity = Some(v);
        log.push(StepRecord {
            step_index: i,
            stage: Stage::Stabilization,
            kind: StepKind::Full,
            model_tokens: full_tokens,
        });
    }
    let kv = kv.ok_or_else(|| invalid_arg!("stabilization produced no key/value snapshot"))?;
    Ok((
        state,
        last_velocity.expect("at least one stabilization step"),
        kv,
    ))
}

/// Run only as far as the region partition and return the mask. Backs mask
/// previews without paying for a full run.
pub fn partition_preview(
    model: &dyn VelocityModel,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
) -> Result<RegionMask> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let eval = Evaluator {
        model,
        cfg_scale: cfg.cfg_scale,
    };
    let mut log = Vec::new();
    let (state, v_last, _) = run_stabilization(&eval, seq, cfg, &schedule, &mut log)?;
    adaptive_region_partition(
        &state,
        &v_last,
        &seq.instruction,
        seq.grid(),
        &schedule,
        cfg.eta,
        cfg.se_radius,
        cfg.se_iterations,
    )
}

/// The full staged run.
pub fn regione_sample(
    model: &dyn VelocityModel,
    seq: &SegmentedSequence,
    cfg: &RegionEConfig,
) -> Result<RunReport> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let eval = Evaluator {
        model,
        cfg_scale: cfg.cfg_scale,
    };
    let full_tokens = seq.total_len() as u64 * eval.branches();
    let region_tokens_per_row = eval.branches(); // times (n_P + n_E) below
    let mut log = Vec::new();
    let mut full_forward_count = 0usize;
    let mut region_forward_count = 0usize;
    let mut cached_step_count = 0usize;

    // Stabilization.
    let (mut state, mut last_full_velocity, raw_kv) =
        run_stabilization(&eval, seq, cfg, &schedule, &mut log)?;
    full_forward_count += cfg.stabilization_steps;

    // Partition, then slice the snapshot the stabilization stage stored.
    let mask = adaptive_region_partition(
        &state,
        &last_full_velocity,
        &seq.instruction,
        seq.grid(),
        &schedule,
        cfg.eta,
        cfg.se_radius,
        cfg.se_iterations,
    )?;
    let mut stores = raw_kv.slice(&mask, state.step_index)?;

    // Region-aware generation between consecutive boundaries.
    let boundaries = cfg.boundaries();
    let mut avd = VelocityCacheState::empty();
    for pair in boundaries.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        debug_assert_eq!(state.step_index, prev);

        let edited_rows = state.data.select_rows(mask.edited_index());
        let unedited_rows = state.data.select_rows(mask.unedited_index());
        // Straight-line jump for the unedited region, from t_prev down to
        // t_{next+1}, using the segment-start full velocity.
        let span = (schedule.t(prev) - schedule.t(next + 1)) as f32;
        let unedited_jumped = unedited_rows
            .sub_scaled(&last_full_velocity.select_rows(mask.unedited_index()), span)?;
        log.push(StepRecord {
            step_index: prev,
            stage: Stage::RegionAware,
            kind: StepKind::UneditedJump,
            model_tokens: 0,
        });

        // Edited region: iterative denoising from prev down to next + 1,
        // each step either a region forward or a cached velocity.
        let mut edited_state = LatentState::new(edited_rows, prev);
        if !mask.edited_index().is_empty() {
            for j in ((next + 2)..=prev).rev() {
                let t = schedule.t(j) as f32;
                let (v, next_avd, decision) =
                    decide_and_velocity(&avd, j, &schedule, &cfg.gamma, cfg.delta, || {
                        eval.region(
                            &seq.prompt,
                            &edited_state.data,
                            mask.edited_index(),
                            t,
                            &stores,
                        )
                    })?;
                avd = next_avd;
                let (kind, tokens) = match decision {
                    CacheDecision::Computed => {
                        region_forward_count += 1;
                        (
                            StepKind::Region,
                            (seq.prompt_len() + mask.edited_index().len()) as u64
                                * region_tokens_per_row,
                        )
                    }
                    CacheDecision::Cached => {
                        cached_step_count += 1;
                        (StepKind::Cached, 0)
                    }
                };
                edited_state = euler_step(&edited_state, &v, &schedule)?;
                log.push(StepRecord {
                    step_index: j,
                    stage: Stage::RegionAware,
                    kind,
                    model_tokens: tokens,
                });
            }
        } else {
            edited_state.step_index = next + 1;
        }
        debug_assert_eq!(edited_state.step_index, next + 1);

        // Gather both regions at t_{next+1} and run the forced full forward,
        // which refreshes the K/V snapshot and the velocity cache.
        let merged = scatter_rows(&edited_state.data, &unedited_jumped, &mask)?;
        state = LatentState::new(merged, next + 1);
        let (v, raw) = eval.full(
            &seq.with_noise(state.data.clone())?,
            schedule.t(next + 1) as f32,
            true,
        )?;
        let raw = raw.ok_or_else(|| invalid_arg!("forced forward returned no snapshot"))?;
        stores = raw.slice(&mask, next + 1)?;
        if !mask.edited_index().is_empty() {
            avd = VelocityCacheState::fresh(v.select_rows(mask.edited_index()), next + 1);
        }
        state = euler_step(&state, &v, &schedule)?;
        last_full_velocity = v;
        full_forward_count += 1;
        log.push(StepRecord {
            step_index: next + 1,
            stage: Stage::RegionAware,
            kind: StepKind::Full,
            model_tokens: full_tokens,
        });
    }

    // Smooth phase: plain full steps on the merged image down to t_0.
    debug_assert_eq!(state.step_index, cfg.smooth_steps - 1);
    while state.step_index > 0 {
        let i = state.step_index;
        let (v, _) = eval.full(
            &seq.with_noise(state.data.clone())?,
            schedule.t(i) as f32,
            false,
        )?;
        state = euler_step(&state, &v, &schedule)?;
        full_forward_count += 1;
        log.push(StepRecord {
            step_index: i,
            stage: Stage::Smooth,
            kind: StepKind::Full,
            model_tokens: full_tokens,
        });
    }

    let token_steps_actual: u64 = log.iter().map(|r| r.model_tokens).sum();
    Ok(RunReport {
        final_latent: state.data,
        mask: Some(mask),
        full_forward_count,
        region_forward_count,
        cached_step_count,
        token_steps_vanilla: full_tokens * cfg.steps as u64,
        token_steps_actual,
        wall_seconds: 0.0,
        step_log: log,
    })
}
