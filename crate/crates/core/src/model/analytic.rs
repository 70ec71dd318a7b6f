//! Analytic velocity field with a known exact solution.
//!
//! Every token follows a quadratic Bezier from noise x1 (t = 1) to target x0
//! (t = 0) with control point c; the field returns the curve tangent
//!
//! ```text
//! v(t) = 2 (1 - t) (c - x0) + 2 t (x1 - c)
//! ```
//!
//! With the control at the midpoint (x0 + x1) / 2 the curve degenerates to a
//! straight line and the tangent reduces to the constant x1 - x0, which is
//! the regime where single-jump estimates are exact. Tokens marked edited
//! keep their genuinely curved trajectories.

use alloc::vec::Vec;

use crate::error::{invalid_arg, Result};
use crate::model::{ModelOutput, SegmentedSequence, VelocityModel};
use crate::rikv::{FullSequenceKv, KVStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticField {
    x0: Mat,
    x1: Mat,
    control: Mat,
    edited_truth: Vec<bool>,
}

impl AnalyticField {
    /// Control rows of unedited-truth tokens are forced to the midpoint, so
    /// those trajectories are straight by construction.
    pub fn new(x0: Mat, x1: Mat, control: Mat, edited_truth: Vec<bool>) -> Result<Self> {
        let (n, d) = (x0.rows(), x0.cols());
        if x1.rows() != n || x1.cols() != d || control.rows() != n || control.cols() != d {
            return Err(invalid_arg!(
                "field tensors must share one shape, got {}x{}, {}x{}, {}x{}",
                n,
                d,
                x1.rows(),
                x1.cols(),
                control.rows(),
                control.cols()
            ));
        }
        if edited_truth.len() != n {
            return Err(invalid_arg!(
                "edited flags cover {} tokens, expected {n}",
                edited_truth.len()
            ));
        }
        let mut control = control;
        for (i, &edited) in edited_truth.iter().enumerate() {
            if !edited {
                for c in 0..d {
                    let mid = 0.5 * (x0.get(i, c) + x1.get(i, c));
                    control.set(i, c, mid);
                }
            }
        }
        Ok(AnalyticField {
            x0,
            x1,
            control,
            edited_truth,
        })
    }

    pub fn tokens(&self) -> usize {
        self.x0.rows()
    }

    pub fn x0(&self) -> &Mat {
        &self.x0
    }

    pub fn x1(&self) -> &Mat {
        &self.x1
    }

    pub fn control(&self) -> &Mat {
        &self.control
    }

    pub fn edited_truth(&self) -> &[bool] {
        &self.edited_truth
    }

    /// Curve tangent for every token at time t.
    pub fn velocity(&self, t: f32) -> Mat {
        let rows: Vec<usize> = (0..self.tokens()).collect();
        self.velocity_rows(t, &rows)
    }

    /// Curve tangent for the given token indices, one output row per index.
    pub fn velocity_rows(&self, t: f32, tokens: &[usize]) -> Mat {
        let d = self.x0.cols();
        let mut out = Mat::zeros(tokens.len(), d);
        for (r, &i) in tokens.iter().enumerate() {
            let x0 = self.x0.row(i);
            let x1 = self.x1.row(i);
            let c = self.control.row(i);
            let row = out.row_mut(r);
            for k in 0..d {
                row[k] = 2.0 * (1.0 - t) * (c[k] - x0[k]) + 2.0 * t * (x1[k] - c[k]);
            }
        }
        out
    }
}

/// Tensors of a synthetic editing scenario with exactly recoverable ground
/// truth, all drawn from one seed.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub field: AnalyticField,
    pub prompt: Mat,
    pub instruction: Mat,
}

/// Build a field whose partition ground truth is recoverable exactly:
/// unedited tokens get instruction rows equal to their targets (cosine 1
/// after a straight-line estimate), while edited tokens get instruction rows
/// orthogonal to everything spanning their trajectory (cosine ~0 no matter
/// where the estimate lands). `curvature` scales how far edited controls sit
/// from the midpoint; 0 makes every trajectory straight.
pub fn synthetic_scenario(
    tokens: usize,
    channels: usize,
    prompt_tokens: usize,
    edited: Vec<bool>,
    curvature: f32,
    seed: u64,
) -> Result<SyntheticScenario> {
    if edited.len() != tokens {
        return Err(invalid_arg!(
            "edited flags cover {} tokens, expected {tokens}",
            edited.len()
        ));
    }
    let mut rng = crate::rng::Rng::new(seed);
    let mut x0 = Mat::random_normal(tokens, channels, 1.0, &mut rng);
    let mut x1 = Mat::random_normal(tokens, channels, 1.0, &mut rng);
    let offset = Mat::random_normal(tokens, channels, curvature, &mut rng);
    let mut control = Mat::from_fn(tokens, channels, |r, c| {
        0.5 * (x0.get(r, c) + x1.get(r, c)) + offset.get(r, c)
    });
    let mut instruction = Mat::zeros(tokens, channels);
    for (i, &is_edited) in edited.iter().enumerate() {
        if is_edited {
            let axis = Mat::random_normal(1, channels, 1.0, &mut rng);
            instruction.row_mut(i).copy_from_slice(axis.row(0));
            let norm_sq: f32 = axis.row(0).iter().map(|x| x * x).sum();
            for m in [&mut x0, &mut x1, &mut control] {
                let row = m.row_mut(i);
                let dot: f32 = row.iter().zip(axis.row(0)).map(|(x, y)| x * y).sum();
                for (r, y) in row.iter_mut().zip(axis.row(0)) {
                    *r -= dot / norm_sq * y;
                }
            }
        } else {
            let target: alloc::vec::Vec<f32> = x0.row(i).to_vec();
            instruction.row_mut(i).copy_from_slice(&target);
        }
    }
    let prompt = Mat::random_normal(prompt_tokens, channels, 1.0, &mut rng);
    let field = AnalyticField::new(x0, x1, control, edited)?;
    Ok(SyntheticScenario {
        field,
        prompt,
        instruction,
    })
}

impl VelocityModel for AnalyticField {
    fn channels(&self) -> usize {
        self.x0.cols()
    }

    fn full_forward(&self, seq: &SegmentedSequence, t: f32, store_kv: bool) -> Result<ModelOutput> {
        if seq.noise_len() != self.tokens() {
            return Err(invalid_arg!(
                "sequence has {} noise tokens, field defines {}",
                seq.noise_len(),
                self.tokens()
            ));
        }
        // The field has no attention layers; a snapshot is an empty but
        // valid store so the pipeline's cache plumbing stays uniform.
        let kv_snapshot = store_kv.then(|| FullSequenceKv {
            layers: Vec::new(),
            prompt_len: seq.prompt_len(),
            noise_len: seq.noise_len(),
            instruction_len: seq.instruction_len(),
        });
        Ok(ModelOutput {
            velocity: self.velocity(t),
            kv_snapshot,
        })
    }

    fn region_forward(
        &self,
        _prompt: &Mat,
        edited: &Mat,
        edited_token_index: &[usize],
        t: f32,
        _store: &KVStore,
    ) -> Result<Mat> {
        if edited.rows() != edited_token_index.len() {
            return Err(invalid_arg!(
                "{} edited rows but {} token indices",
                edited.rows(),
                edited_token_index.len()
            ));
        }
        Ok(self.velocity_rows(t, edited_token_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::schedule::{euler_step, make_schedule, LatentState, ScheduleKind};

    fn random_field(n: usize, d: usize, edited: Vec<bool>, seed: u64) -> AnalyticField {
        let mut rng = Rng::new(seed);
        let x0 = Mat::random_normal(n, d, 1.0, &mut rng);
        let x1 = Mat::random_normal(n, d, 1.0, &mut rng);
        // Curved but not wildly so: the control sits near the midpoint, which
        // keeps the Euler truncation error within the asserted tolerances.
        let offset = Mat::random_normal(n, d, 0.25, &mut rng);
        let control = Mat::from_fn(n, d, |r, c| {
            0.5 * (x0.get(r, c) + x1.get(r, c)) + offset.get(r, c)
        });
        AnalyticField::new(x0, x1, control, edited).unwrap()
    }

    /// Closed-form Bezier position, written out independently of the field.
    fn bezier_position(field: &AnalyticField, t: f32) -> Mat {
        let (n, d) = (field.tokens(), field.x0().cols());
        Mat::from_fn(n, d, |r, c| {
            let x0 = field.x0().get(r, c);
            let x1 = field.x1().get(r, c);
            let ctrl = field.control().get(r, c);
            (1.0 - t) * (1.0 - t) * x0 + 2.0 * t * (1.0 - t) * ctrl + t * t * x1
        })
    }

    #[test]
    fn unedited_velocity_is_constant_x1_minus_x0() {
        let field = random_field(6, 4, vec![false; 6], 3);
        let expected = field.x1().sub_scaled(field.x0(), 1.0).unwrap();
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let v = field.velocity(t);
            assert!(v.max_abs_diff(&expected) <= 1e-6, "t={t}");
        }
    }

    #[test]
    fn velocity_at_zero_is_twice_control_minus_x0() {
        let field = random_field(5, 3, vec![true; 5], 4);
        let v = field.velocity(0.0);
        let expected = field
            .control()
            .sub_scaled(field.x0(), 1.0)
            .unwrap()
            .scale(2.0);
        assert!(v.max_abs_diff(&expected) <= 1e-6);
    }

    #[test]
    fn euler_integration_reaches_x0() {
        // Integrating the tangent field backward from x1 with a fine grid
        // lands on x0; the closed-form endpoint is the oracle.
        let field = random_field(8, 4, (0..8).map(|i| i % 2 == 0).collect(), 9);
        let schedule = make_schedule(1000, ScheduleKind::Uniform).unwrap();
        let mut state = LatentState::new(field.x1().clone(), 1000);
        while state.step_index > 0 {
            let v = field.velocity(schedule.t(state.step_index) as f32);
            state = euler_step(&state, &v, &schedule).unwrap();
        }
        assert!(
            state.data.max_abs_diff(field.x0()) <= 2e-3,
            "gap {}",
            state.data.max_abs_diff(field.x0())
        );
    }

    #[test]
    fn euler_path_tracks_closed_form_positions() {
        let field = random_field(4, 3, vec![true; 4], 17);
        let schedule = make_schedule(2000, ScheduleKind::Uniform).unwrap();
        let mut state = LatentState::new(field.x1().clone(), 2000);
        for _ in 0..1000 {
            let v = field.velocity(schedule.t(state.step_index) as f32);
            state = euler_step(&state, &v, &schedule).unwrap();
        }
        let expected = bezier_position(&field, schedule.t(state.step_index) as f32);
        assert!(state.data.max_abs_diff(&expected) <= 2e-3);
    }

    #[test]
    fn straight_tokens_one_step_to_zero_is_exact() {
        let field = random_field(7, 5, vec![false; 7], 21);
        let schedule = make_schedule(10, ScheduleKind::Uniform).unwrap();
        for idx in [2usize, 5, 8, 10] {
            let t = schedule.t(idx) as f32;
            let pos = bezier_position(&field, t);
            let state = LatentState::new(pos, idx);
            let v = field.velocity(t);
            let est = crate::schedule::one_step_estimate(&state, &v, 0, &schedule).unwrap();
            assert!(est.max_abs_diff(field.x0()) <= 1e-6, "from index {idx}");
        }
    }

    #[test]
    fn bezier_gap_of_one_step_estimate_matches_algebra() {
        // Estimating x0 from t=0.8 by linear extrapolation of a curved token
        // misses by 2 t^2 (c - (x0 + x1)/2); both sides computed from the
        // closed forms.
        let field = random_field(3, 4, vec![true; 3], 33);
        let schedule = make_schedule(10, ScheduleKind::Uniform).unwrap();
        let idx = 8; // t = 0.8
        let t = schedule.t(idx) as f32;
        let state = LatentState::new(bezier_position(&field, t), idx);
        let est =
            crate::schedule::one_step_estimate(&state, &field.velocity(t), 0, &schedule).unwrap();
        let gap = est.sub_scaled(field.x0(), 1.0).unwrap();
        let expected_gap = Mat::from_fn(3, 4, |r, c| {
            let mid = 0.5 * (field.x0().get(r, c) + field.x1().get(r, c));
            2.0 * t * t * (field.control().get(r, c) - mid)
        });
        assert!(gap.max_abs_diff(&expected_gap) <= 1e-5);
    }

    #[test]
    fn region_rows_match_full_velocity() {
        let field = random_field(9, 4, (0..9).map(|i| i < 4).collect(), 40);
        let rows = [0usize, 2, 3];
        let sub = field.velocity_rows(0.4, &rows);
        let full = field.velocity(0.4);
        for (r, &i) in rows.iter().enumerate() {
            assert_eq!(sub.row(r), full.row(i));
        }
    }
}
