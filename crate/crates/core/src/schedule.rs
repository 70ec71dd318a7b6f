//! Timestep schedules and the discrete Euler sampling primitives.
//!
//! Sampling walks a latent from noise (t = 1, step index T) down to the
//! image (t = 0, step index 0):
//!
//! ```text
//! x_{i-1} = x_i - (t_i - t_{i-1}) * v(x_i, t_i)
//! ```
//!
//! Straight trajectories make the multi-step walk collapsible into a single
//! jump, which `one_step_estimate` exposes.

use alloc::vec::Vec;

use crate::error::{invalid_arg, Error, Result};
use crate::tensor::Mat;

/// How the schedule places its points in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// t_i = i / T
    Uniform,
    /// t_i = shift * u / (1 + (shift - 1) * u) with u = i / T.
    /// shift = 1 reduces to uniform.
    Shifted(f64),
}

/// Monotone grid t_0 = 0 < t_1 < ... < t_T = 1.
///
/// Points are kept in f64 so that telescoping sums of step widths stay exact
/// to ~1e-16; tensor math remains f32.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepSchedule {
    points: Vec<f64>,
    kind: ScheduleKind,
}

impl TimestepSchedule {
    /// Number of sampling steps T (one less than the point count).
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// t_i.
    pub fn t(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Step width t_i - t_{i-1} for 1 <= i <= T.
    pub fn dt(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.steps() {
            return Err(invalid_arg!(
                "step index {i} has no width in a {}-step schedule",
                self.steps()
            ));
        }
        Ok(self.points[i] - self.points[i - 1])
    }
}

/// Build a schedule with T sampling steps (T + 1 points).
pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<TimestepSchedule> {
    if steps == 0 {
        return Err(invalid_arg!("schedule needs at least one step"));
    }
    if let ScheduleKind::Shifted(shift) = kind {
        if shift <= 0.0 || !shift.is_finite() {
            return Err(invalid_arg!("schedule shift must be positive, got {shift}"));
        }
    }
    let points: Vec<f64> = (0..=steps)
        .map(|i| {
            // Endpoints pinned exactly; the map sends 0 to 0 and 1 to 1 but
            // floating point does not always agree.
            if i == 0 {
                0.0
            } else if i == steps {
                1.0
            } else {
                let u = i as f64 / steps as f64;
                match kind {
                    ScheduleKind::Uniform => u,
                    ScheduleKind::Shifted(shift) => shift * u / (1.0 + (shift - 1.0) * u),
                }
            }
        })
        .collect();
    for i in 1..=steps {
        if points[i] <= points[i - 1] {
            return Err(invalid_arg!(
                "schedule is not strictly increasing at index {i} (kind {kind:?})"
            ));
        }
    }
    Ok(TimestepSchedule { points, kind })
}

/// A latent tensor pinned to a position on the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub data: Mat,
    /// Current step index i; the tensor sits at time t_i. Counts down to 0.
    pub step_index: usize,
}

impl LatentState {
    pub fn new(data: Mat, step_index: usize) -> Self {
        LatentState { data, step_index }
    }
}

/// Linear interpolation (1 - t) * x0 + t * x1.
pub fn interpolate(x0: &Mat, x1: &Mat, t: f32) -> Result<Mat> {
    if x0.rows() != x1.rows() || x0.cols() != x1.cols() {
        return Err(invalid_arg!(
            "interpolate shape mismatch: {}x{} vs {}x{}",
            x0.rows(),
            x0.cols(),
            x1.rows(),
            x1.cols()
        ));
    }
    let data = x0
        .data()
        .iter()
        .zip(x1.data().iter())
        .map(|(a, b)| (1.0 - t) * a + t * b)
        .collect();
    Mat::from_vec(x0.rows(), x0.cols(), data)
}

/// One discrete Euler update: x' = x - (t_i - t_{i-1}) * v, index i - 1.
pub fn euler_step(
    state: &LatentState,
    v: &Mat,
    schedule: &TimestepSchedule,
) -> Result<LatentState> {
    if state.step_index == 0 {
        return Err(Error::AlreadyTerminal);
    }
    if state.step_index > schedule.steps() {
        return Err(invalid_arg!(
            "step index {} beyond schedule with {} steps",
            state.step_index,
            schedule.steps()
        ));
    }
    let dt = schedule.dt(state.step_index)? as f32;
    Ok(LatentState {
        data: state.data.sub_scaled(v, dt)?,
        step_index: state.step_index - 1,
    })
}

/// Single-jump trajectory estimate: x_hat(t_f) = x - v * (t_i - t_f).
///
/// Exact when the velocity is constant along the trajectory. Accepts
/// `target_index == step_index` (zero-width jump, returns the data
/// unchanged); targets above the current index are rejected.
pub fn one_step_estimate(
    state: &LatentState,
    v: &Mat,
    target_index: usize,
    schedule: &TimestepSchedule,
) -> Result<Mat> {
    if target_index > state.step_index {
        return Err(invalid_arg!(
            "one-step target {} is above current index {}",
            target_index,
            state.step_index
        ));
    }
    if state.step_index > schedule.steps() {
        return Err(invalid_arg!(
            "step index {} beyond schedule with {} steps",
            state.step_index,
            schedule.steps()
        ));
    }
    let span = (schedule.t(state.step_index) - schedule.t(target_index)) as f32;
    state.data.sub_scaled(v, span)
}
