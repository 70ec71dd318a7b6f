//! Pluggable velocity fields.
//!
//! A velocity model sees a token sequence laid out as
//! `[prompt, noise, instruction]` and returns one velocity row per active
//! noise token; prompt and instruction rows never appear in the output.
//! Two desk-scale implementations live here: a seeded toy transformer with
//! attention-level cache hooks ([`toy::ToyDiT`]) and an analytic
//! straight/curved field with a known closed-form trajectory
//! ([`analytic::AnalyticField`]).

pub mod analytic;
pub mod toy;

use crate::error::{invalid_arg, Result};
use crate::partition::GridMap;
use crate::rikv::{FullSequenceKv, KVStore};
use crate::tensor::Mat;

/// One token tensor split into prompt / noise / instruction segments.
///
/// The concatenation order for attention is always
/// `[prompt, noise, instruction]`. In the editing layout the instruction
/// grid mirrors the noise grid (one instruction token per noise token); in
/// the region layout the instruction segment is empty and the noise segment
/// holds only the active (edited) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSequence {
    pub prompt: Mat,
    pub noise: Mat,
    pub instruction: Mat,
    grid: GridMap,
}

impl SegmentedSequence {
    /// Editing layout: noise tokens on an H x W grid, instruction tokens
    /// aligned one-to-one with them.
    pub fn editing(prompt: Mat, noise: Mat, instruction: Mat, grid: GridMap) -> Result<Self> {
        let d = noise.cols();
        if prompt.rows() > 0 && prompt.cols() != d {
            return Err(invalid_arg!(
                "prompt channel count {} differs from noise {}",
                prompt.cols(),
                d
            ));
        }
        if instruction.rows() != noise.rows() || instruction.cols() != d {
            return Err(invalid_arg!(
                "instruction segment {}x{} must mirror the noise segment {}x{}",
                instruction.rows(),
                instruction.cols(),
                noise.rows(),
                d
            ));
        }
        if grid.len() != noise.rows() {
            return Err(invalid_arg!(
                "grid covers {} cells but there are {} noise tokens",
                grid.len(),
                noise.rows()
            ));
        }
        Ok(SegmentedSequence {
            prompt,
            noise,
            instruction,
            grid,
        })
    }

    /// Region layout: prompt plus the active noise rows only; the
    /// instruction segment is dropped (its keys/values come from the cache).
    pub fn region(prompt: Mat, active_noise: Mat) -> Result<Self> {
        let d = active_noise.cols();
        if prompt.rows() > 0 && prompt.cols() != d {
            return Err(invalid_arg!(
                "prompt channel count {} differs from noise {}",
                prompt.cols(),
                d
            ));
        }
        let n = active_noise.rows();
        Ok(SegmentedSequence {
            prompt,
            instruction: Mat::zeros(0, d),
            grid: GridMap::identity(1, n),
            noise: active_noise,
        })
    }

    pub fn grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt.rows()
    }

    pub fn noise_len(&self) -> usize {
        self.noise.rows()
    }

    pub fn instruction_len(&self) -> usize {
        self.instruction.rows()
    }

    pub fn total_len(&self) -> usize {
        self.prompt_len() + self.noise_len() + self.instruction_len()
    }

    pub fn channels(&self) -> usize {
        self.noise.cols()
    }

    /// Same sequence with the noise segment replaced (step-to-step update).
    pub fn with_noise(&self, noise: Mat) -> Result<Self> {
        if noise.rows() != self.noise.rows() || noise.cols() != self.noise.cols() {
            return Err(invalid_arg!(
                "replacement noise {}x{} does not match {}x{}",
                noise.rows(),
                noise.cols(),
                self.noise.rows(),
                self.noise.cols()
            ));
        }
        Ok(SegmentedSequence {
            prompt: self.prompt.clone(),
            noise,
            instruction: self.instruction.clone(),
            grid: self.grid.clone(),
        })
    }
}

/// What a forward pass should do with attention keys/values.
#[derive(Debug, Clone, Copy)]
pub enum CacheMode<'a> {
    /// Compute attention normally, keep nothing.
    Plain,
    /// Compute normally and additionally return the per-layer K/V of the
    /// whole sequence. Storing must not change the math.
    Store,
    /// Region layout only: splice the cached unedited/instruction rows into
    /// every attention layer.
    Inject(&'a KVStore),
}

/// Velocity rows for the active noise tokens, plus the optional K/V
/// snapshot when the forward ran in store mode.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub velocity: Mat,
    pub kv_snapshot: Option<FullSequenceKv>,
}

/// The model contract the sampling pipelines drive.
pub trait VelocityModel {
    fn channels(&self) -> usize;

    /// Forward over the full editing layout. `store_kv` requests a per-layer
    /// K/V snapshot alongside the velocity.
    fn full_forward(&self, seq: &SegmentedSequence, t: f32, store_kv: bool) -> Result<ModelOutput>;

    /// Forward over prompt + edited rows only, with cached keys/values
    /// injected. `edited_token_index` maps each edited row back to its
    /// noise-token index.
    fn region_forward(
        &self,
        prompt: &Mat,
        edited: &Mat,
        edited_token_index: &[usize],
        t: f32,
        store: &KVStore,
    ) -> Result<Mat>;
}

/// Classifier-free guidance combination: v_uncond + scale * (v_cond - v_uncond).
pub fn cfg_combine(v_cond: &Mat, v_uncond: &Mat, scale: f32) -> Result<Mat> {
    if v_cond.rows() != v_uncond.rows() || v_cond.cols() != v_uncond.cols() {
        return Err(invalid_arg!(
            "guidance shape mismatch: {}x{} vs {}x{}",
            v_cond.rows(),
            v_cond.cols(),
            v_uncond.rows(),
            v_uncond.cols()
        ));
    }
    let data = v_cond
        .data()
        .iter()
        .zip(v_uncond.data().iter())
        .map(|(c, u)| u + scale * (c - u))
        .collect();
    Mat::from_vec(v_cond.rows(), v_cond.cols(), data)
}
