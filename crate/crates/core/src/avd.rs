//! Adaptive velocity decay cache.
//!
//! Across adjacent timesteps the edited-region velocity keeps its direction
//! and shrinks in magnitude. One cached velocity can therefore stand in for
//! several model calls if it is rescaled per skipped step by
//!
//! ```text
//! factor(i) = (1 - (t_{i+1} - t_i)) * gamma_i
//! ```
//!
//! where the (1 - dt) part is what an Euler-solver residual cache implies
//! and gamma_i is a fitted per-timestep correction. The accumulated product
//! doubles as an error gauge: once `1 - product` exceeds a threshold, the
//! cache is declared stale and the next velocity is recomputed. With gamma
//! identically 1 the cached velocities coincide with what a residual cache
//! would produce, which `residual_cache_velocity` states directly.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{invalid_arg, Error, Result};
use crate::schedule::TimestepSchedule;
use crate::tensor::Mat;

/// Where a gamma table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSource {
    /// gamma identically 1 at every step.
    Unit,
    /// Fitted from recorded velocity-norm traces.
    Calibrated { num_traces: usize },
}

/// Per-step-index magnitude corrections. May be partial: indices that are
/// never consulted (stabilization and smooth stages, unfittable endpoints)
/// need no entry, and looking one of them up is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTable {
    gamma: BTreeMap<usize, f32>,
    source: GammaSource,
}

impl GammaTable {
    pub fn unit() -> Self {
        GammaTable {
            gamma: BTreeMap::new(),
            source: GammaSource::Unit,
        }
    }

    pub fn calibrated(entries: BTreeMap<usize, f32>, num_traces: usize) -> Result<Self> {
        for (&i, &g) in &entries {
            if g <= 0.0 || !g.is_finite() {
                return Err(invalid_arg!("gamma at step {i} must be positive, got {g}"));
            }
        }
        Ok(GammaTable {
            gamma: entries,
            source: GammaSource::Calibrated { num_traces },
        })
    }

    pub fn source(&self) -> GammaSource {
        self.source
    }

    pub fn entries(&self) -> &BTreeMap<usize, f32> {
        &self.gamma
    }

    pub fn get(&self, step: usize) -> Option<f32> {
        match self.source {
            GammaSource::Unit => Some(1.0),
            GammaSource::Calibrated { .. } => self.gamma.get(&step).copied(),
        }
    }
}

/// Per-step decay factor (1 - dt_{i+1,i}) * gamma_i. Needs both t_i and
/// t_{i+1}, so valid indices are 1..=T-1.
pub fn decay_factor(i: usize, schedule: &TimestepSchedule, gamma: &GammaTable) -> Result<f64> {
    if i == 0 || i + 1 > schedule.steps() {
        return Err(invalid_arg!(
            "decay factor needs steps i={i} and i+1 inside a {}-step schedule",
            schedule.steps()
        ));
    }
    let dt = schedule.t(i + 1) - schedule.t(i);
    let g = gamma
        .get(i)
        .ok_or_else(|| invalid_arg!("no gamma entry for step {i}"))?;
    Ok((1.0 - dt) * g as f64)
}

/// Cached edited-region velocity plus the running decay bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityCacheState {
    v_cached: Option<Mat>,
    cached_at: usize,
    decay_product: f64,
}

impl Default for VelocityCacheState {
    fn default() -> Self {
        Self::empty()
    }
}

impl VelocityCacheState {
    pub fn empty() -> Self {
        VelocityCacheState {
            v_cached: None,
            cached_at: 0,
            decay_product: 1.0,
        }
    }

    /// State right after a fresh compute at step `step`: product 1,
    /// criterion 0.
    pub fn fresh(velocity: Mat, step: usize) -> Self {
        VelocityCacheState {
            v_cached: Some(velocity),
            cached_at: step,
            decay_product: 1.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.v_cached.is_none()
    }

    pub fn cached_velocity(&self) -> Option<&Mat> {
        self.v_cached.as_ref()
    }

    /// Step index of the velocity the cache holds.
    pub fn cached_at(&self) -> usize {
        self.cached_at
    }

    /// Product of the decay factors accumulated since the last compute.
    pub fn decay_product(&self) -> f64 {
        self.decay_product
    }

    /// Accumulated-error criterion 1 - product.
    pub fn criterion(&self) -> f64 {
        1.0 - self.decay_product
    }
}

/// Fold the decay factor of step `i` into the running product.
pub fn accumulate_criterion(
    state: &VelocityCacheState,
    i: usize,
    schedule: &TimestepSchedule,
    gamma: &GammaTable,
) -> Result<VelocityCacheState> {
    if state.is_empty() {
        return Err(Error::CacheMiss(alloc::string::String::from(
            "cannot accumulate decay on an empty velocity cache",
        )));
    }
    let factor = decay_factor(i, schedule, gamma)?;
    Ok(VelocityCacheState {
        v_cached: state.v_cached.clone(),
        cached_at: state.cached_at,
        decay_product: state.decay_product * factor,
    })
}

/// Outcome of one cache decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheDecision {
    Computed,
    Cached,
}

/// Decide step `i`: tentatively fold in its decay factor; if the criterion
/// ends up above `delta` (or the cache is empty) invoke `compute` and reset
/// the cache with the fresh velocity, otherwise return the cached velocity
/// rescaled by the accumulated product without any model call.
pub fn decide_and_velocity(
    state: &VelocityCacheState,
    i: usize,
    schedule: &TimestepSchedule,
    gamma: &GammaTable,
    delta: f64,
    compute: impl FnOnce() -> Result<Mat>,
) -> Result<(Mat, VelocityCacheState, CacheDecision)> {
    if delta < 0.0 {
        return Err(invalid_arg!("delta must be nonnegative, got {delta}"));
    }
    if !state.is_empty() {
        let tentative = accumulate_criterion(state, i, schedule, gamma)?;
        // Recompute strictly above delta; ties stay on the cache.
        let stale = tentative.criterion() > delta;
        if !stale {
            let v = tentative
                .cached_velocity()
                .expect("tentative state inherits the cached velocity")
                .scale(tentative.decay_product() as f32);
            return Ok((v, tentative, CacheDecision::Cached));
        }
    }
    let v = compute()?;
    let new_state = VelocityCacheState::fresh(v.clone(), i);
    Ok((v, new_state, CacheDecision::Computed))
}

/// Velocity a residual (delta-style) cache implies after skipping from step
/// `i_start` down to step `i_end`: the cached velocity scaled by the product
/// of (1 - dt) over the skipped steps. `i_end == i_start` is the empty
/// product.
pub fn residual_cache_velocity(
    v_cached: &Mat,
    i_start: usize,
    i_end: usize,
    schedule: &TimestepSchedule,
) -> Result<Mat> {
    if i_end > i_start {
        return Err(invalid_arg!(
            "residual span runs downward; got start {i_start} < end {i_end}"
        ));
    }
    if i_start > schedule.steps() {
        return Err(invalid_arg!(
            "start step {i_start} beyond schedule with {} steps",
            schedule.steps()
        ));
    }
    let mut coeff = 1.0f64;
    for m in i_end..i_start {
        coeff *= 1.0 - (schedule.t(m + 1) - schedule.t(m));
    }
    Ok(v_cached.scale(coeff as f32))
}

/// One recorded vanilla run: the L2 norm of the tracked velocity tensor at
/// every executed step, in execution order (step T first, step 1 last).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNormTrace {
    norms: Vec<f64>,
}

impl VelocityNormTrace {
    pub fn new(norms: Vec<f64>) -> Self {
        VelocityNormTrace { norms }
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Norm recorded at step index `i` for a T-step run.
    pub fn norm_at_step(&self, i: usize, steps: usize) -> f64 {
        self.norms[steps - i]
    }
}

/// Fit per-step gamma from vanilla-run norm traces:
///
/// ```text
/// gamma_i = mean over traces of (|v_i| / |v_{i+1}|) / (1 - dt_{i+1,i})
/// ```
///
/// A trace with a zero denominator norm is skipped at that index; an index
/// where every trace is skipped gets no table entry (consulting it later is
/// the error).
pub fn fit_gamma(traces: &[VelocityNormTrace], schedule: &TimestepSchedule) -> Result<GammaTable> {
    if traces.is_empty() {
        return Err(invalid_arg!("gamma fit needs at least one trace"));
    }
    let steps = schedule.steps();
    for (k, trace) in traces.iter().enumerate() {
        if trace.len() != steps {
            return Err(invalid_arg!(
                "trace {k} has {} norms, expected one per step ({steps})",
                trace.len()
            ));
        }
    }
    let mut entries = BTreeMap::new();
    for i in 1..steps {
        let solver = 1.0 - (schedule.t(i + 1) - schedule.t(i));
        let mut sum = 0.0f64;
        let mut used = 0usize;
        for trace in traces {
            let denom = trace.norm_at_step(i + 1, steps);
            if denom == 0.0 {
                continue;
            }
            sum += trace.norm_at_step(i, steps) / denom / solver;
            used += 1;
        }
        if used > 0 {
            entries.insert(i, (sum / used as f64) as f32);
        }
    }
    GammaTable::calibrated(entries, traces.len())
}
