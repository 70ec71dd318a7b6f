//! Seeded toy instruction transformer.
//!
//! A small pre-norm transformer over the joint `[prompt, noise, instruction]`
//! stream: per layer, a sinusoidal embedding of t is added to every token,
//! then multi-head self-attention and a two-layer MLP, both with residuals.
//! There is no positional encoding; grid position enters only through the
//! instruction-token alignment, which keeps the forward permutation-
//! equivariant over noise tokens. Attention exposes the cache hooks the
//! region pipeline needs: store per-layer K/V, or run region-restricted
//! attention against an injected cache.

use alloc::vec::Vec;

use crate::error::{invalid_arg, Result};
use crate::math;
use crate::model::{CacheMode, ModelOutput, SegmentedSequence, VelocityModel};
use crate::rikv::{self, FullSequenceKv, KVStore, LayerKv};
use crate::rng::Rng;
use crate::tensor::Mat;

const RMS_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDiTConfig {
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for ToyDiTConfig {
    fn default() -> Self {
        ToyDiTConfig {
            channels: 64,
            heads: 4,
            layers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Mat,
    wk: Mat,
    wv: Mat,
    wo: Mat,
    w1: Mat,
    w2: Mat,
}

/// Toy transformer weights, deterministically generated from a seed: the
/// same seed always yields bit-identical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiT {
    cfg: ToyDiTConfig,
    blocks: Vec<Block>,
    time_proj: Mat,
    out_proj: Mat,
    seed: u64,
}

impl ToyDiT {
    pub fn new(cfg: ToyDiTConfig, seed: u64) -> Result<Self> {
        let d = cfg.channels;
        if d == 0 || cfg.heads == 0 || !d.is_multiple_of(cfg.heads) {
            return Err(invalid_arg!(
                "channel count {d} not divisible into {} heads",
                cfg.heads
            ));
        }
        if !d.is_multiple_of(2) {
            return Err(invalid_arg!("channel count {d} must be even"));
        }
        if cfg.layers == 0 {
            return Err(invalid_arg!("at least one layer required"));
        }
        let hidden = 4 * d;
        let mut rng = Rng::new(seed);
        let attn_scale = 1.0 / math::sqrtf(d as f32);
        let mlp_scale = 1.0 / math::sqrtf(hidden as f32);
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                wq: Mat::random_normal(d, d, attn_scale, &mut rng),
                wk: Mat::random_normal(d, d, attn_scale, &mut rng),
                wv: Mat::random_normal(d, d, attn_scale, &mut rng),
                wo: Mat::random_normal(d, d, attn_scale, &mut rng),
                w1: Mat::random_normal(d, hidden, attn_scale, &mut rng),
                w2: Mat::random_normal(hidden, d, mlp_scale, &mut rng),
            })
            .collect();
        let time_proj = Mat::random_normal(d, d, attn_scale, &mut rng);
        let out_proj = Mat::random_normal(d, d, attn_scale, &mut rng);
        Ok(ToyDiT {
            cfg,
            blocks,
            time_proj,
            out_proj,
            seed,
        })
    }

    pub fn config(&self) -> ToyDiTConfig {
        self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named weight matrices in a fixed order, for snapshotting to disk.
    pub fn named_parameters(&self) -> Vec<(alloc::string::String, &Mat)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((alloc::format!("blocks.{i}.wq"), &b.wq));
            out.push((alloc::format!("blocks.{i}.wk"), &b.wk));
            out.push((alloc::format!("blocks.{i}.wv"), &b.wv));
            out.push((alloc::format!("blocks.{i}.wo"), &b.wo));
            out.push((alloc::format!("blocks.{i}.w1"), &b.w1));
            out.push((alloc::format!("blocks.{i}.w2"), &b.w2));
        }
        out.push((alloc::string::String::from("time_proj"), &self.time_proj));
        out.push((alloc::string::String::from("out_proj"), &self.out_proj));
        out
    }

    /// Run the transformer. Plain and store modes take the editing layout;
    /// inject mode takes the region layout (no instruction segment) and
    /// splices the cached unedited/instruction K/V into every layer.
    pub fn forward(
        &self,
        seq: &SegmentedSequence,
        t: f32,
        mode: CacheMode<'_>,
    ) -> Result<ModelOutput> {
        let d = self.cfg.channels;
        if seq.channels() != d {
            return Err(invalid_arg!(
                "sequence has {} channels, model expects {d}",
                seq.channels()
            ));
        }
        match mode {
            CacheMode::Inject(store) => {
                if seq.instruction_len() != 0 {
                    return Err(invalid_arg!(
                        "inject mode takes the region layout; drop the instruction segment"
                    ));
                }
                if !store.populated() {
                    return Err(crate::error::Error::CacheMiss(alloc::string::String::from(
                        "inject mode requires a populated key/value store",
                    )));
                }
                if store.num_layers() != self.cfg.layers {
                    return Err(invalid_arg!(
                        "store has {} layers, model has {}",
                        store.num_layers(),
                        self.cfg.layers
                    ));
                }
            }
            CacheMode::Store | CacheMode::Plain => {}
        }

        let mut x = Mat::vstack(&[&seq.prompt, &seq.noise, &seq.instruction])?;
        let temb_row = sinusoidal_embedding(t, d);
        let temb = Mat::from_vec(1, d, temb_row)?.matmul(&self.time_proj);
        let mut snapshot_layers: Vec<LayerKv> = Vec::new();

        for (layer, block) in self.blocks.iter().enumerate() {
            x.add_row_broadcast(temb.row(0));
            let h = rms_norm(&x);
            let q = h.matmul(&block.wq);
            let k = h.matmul(&block.wk);
            let v = h.matmul(&block.wv);
            if matches!(mode, CacheMode::Store) {
                snapshot_layers.push(LayerKv {
                    k: k.clone(),
                    v: v.clone(),
                });
            }
            let attn = match mode {
                CacheMode::Inject(store) => {
                    rikv::region_attention(&q, &k, &v, store, layer, self.cfg.heads)?
                }
                _ => rikv::multi_head_attention(&q, &k, &v, self.cfg.heads)?,
            };
            x.add_assign(&attn.matmul(&block.wo));
            let h2 = rms_norm(&x);
            let mut mid = h2.matmul(&block.w1);
            for v in mid.data_mut() {
                *v = silu(*v);
            }
            x.add_assign(&mid.matmul(&block.w2));
        }

        let noise_rows: Vec<usize> =
            (seq.prompt_len()..seq.prompt_len() + seq.noise_len()).collect();
        let velocity = rms_norm(&x.select_rows(&noise_rows)).matmul(&self.out_proj);
        let kv_snapshot = if matches!(mode, CacheMode::Store) {
            Some(FullSequenceKv {
                layers: snapshot_layers,
                prompt_len: seq.prompt_len(),
                noise_len: seq.noise_len(),
                instruction_len: seq.instruction_len(),
            })
        } else {
            None
        };
        Ok(ModelOutput {
            velocity,
            kv_snapshot,
        })
    }
}

impl VelocityModel for ToyDiT {
    fn channels(&self) -> usize {
        self.cfg.channels
    }

    fn full_forward(&self, seq: &SegmentedSequence, t: f32, store_kv: bool) -> Result<ModelOutput> {
        let mode = if store_kv {
            CacheMode::Store
        } else {
            CacheMode::Plain
        };
        self.forward(seq, t, mode)
    }

    fn region_forward(
        &self,
        prompt: &Mat,
        edited: &Mat,
        _edited_token_index: &[usize],
        t: f32,
        store: &KVStore,
    ) -> Result<Mat> {
        let seq = SegmentedSequence::region(prompt.clone(), edited.clone())?;
        Ok(self.forward(&seq, t, CacheMode::Inject(store))?.velocity)
    }
}

fn rms_norm(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean_sq: f32 = row.iter().map(|v| v * v).sum::<f32>() / row.len().max(1) as f32;
        let inv = 1.0 / math::sqrtf(mean_sq + RMS_EPS);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    out
}

fn silu(x: f32) -> f32 {
    x / (1.0 + math::expf(-x))
}

/// [sin(w_k * s), ..., cos(w_k * s), ...] with geometric frequencies, s = 1000 t.
fn sinusoidal_embedding(t: f32, d: usize) -> Vec<f32> {
    let half = d / 2;
    let mut out = Vec::with_capacity(d);
    let s = t * 1000.0;
    for k in 0..half {
        let freq = math::powf(10000.0, -(k as f32) / half as f32);
        out.push(math::sinf(s * freq));
    }
    for k in 0..half {
        let freq = math::powf(10000.0, -(k as f32) / half as f32);
        out.push(math::cosf(s * freq));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{GridMap, RegionMask};
    use crate::rikv::snapshot;

    fn small_cfg() -> ToyDiTConfig {
        ToyDiTConfig {
            channels: 16,
            heads: 2,
            layers: 3,
        }
    }

    fn make_seq(
        seed: u64,
        cfg: &ToyDiTConfig,
        h: usize,
        w: usize,
        n_p: usize,
    ) -> SegmentedSequence {
        let mut rng = Rng::new(seed);
        let d = cfg.channels;
        let prompt = Mat::random_normal(n_p, d, 1.0, &mut rng);
        let noise = Mat::random_normal(h * w, d, 1.0, &mut rng);
        let instr = Mat::random_normal(h * w, d, 1.0, &mut rng);
        SegmentedSequence::editing(prompt, noise, instr, GridMap::identity(h, w)).unwrap()
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let cfg = small_cfg();
        let a = ToyDiT::new(cfg, 1234).unwrap();
        let b = ToyDiT::new(cfg, 1234).unwrap();
        let seq = make_seq(9, &cfg, 4, 4, 3);
        let va = a.forward(&seq, 0.7, CacheMode::Plain).unwrap().velocity;
        let vb = b.forward(&seq, 0.7, CacheMode::Plain).unwrap().velocity;
        assert!(va.bits_eq(&vb));
    }

    #[test]
    fn different_seed_differs() {
        let cfg = small_cfg();
        let a = ToyDiT::new(cfg, 1).unwrap();
        let b = ToyDiT::new(cfg, 2).unwrap();
        let seq = make_seq(9, &cfg, 4, 4, 3);
        let va = a.forward(&seq, 0.7, CacheMode::Plain).unwrap().velocity;
        let vb = b.forward(&seq, 0.7, CacheMode::Plain).unwrap().velocity;
        assert!(va.max_abs_diff(&vb) > 1e-3);
    }

    #[test]
    fn store_mode_does_not_change_the_velocity() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 7).unwrap();
        let seq = make_seq(3, &cfg, 4, 4, 2);
        let plain = model.forward(&seq, 0.5, CacheMode::Plain).unwrap();
        let stored = model.forward(&seq, 0.5, CacheMode::Store).unwrap();
        assert!(plain.velocity.bits_eq(&stored.velocity));
        assert!(plain.kv_snapshot.is_none());
        let kv = stored.kv_snapshot.expect("store returns a snapshot");
        assert_eq!(kv.layers.len(), cfg.layers);
        assert_eq!(kv.total_rows(), seq.total_len());
    }

    #[test]
    fn velocity_rows_cover_only_noise_tokens() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 7).unwrap();
        let seq = make_seq(3, &cfg, 4, 4, 2);
        let out = model.forward(&seq, 0.5, CacheMode::Plain).unwrap();
        assert_eq!(out.velocity.rows(), seq.noise_len());
        assert_eq!(out.velocity.cols(), cfg.channels);
    }

    #[test]
    fn velocity_depends_on_timestep() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 7).unwrap();
        let seq = make_seq(3, &cfg, 4, 4, 2);
        let a = model.forward(&seq, 0.2, CacheMode::Plain).unwrap().velocity;
        let b = model.forward(&seq, 0.8, CacheMode::Plain).unwrap().velocity;
        assert!(a.max_abs_diff(&b) > 1e-4);
    }

    #[test]
    fn region_forward_with_fresh_cache_matches_full_forward() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 21).unwrap();
        let seq = make_seq(5, &cfg, 8, 8, 4);
        let t = 0.6;
        let full = model.forward(&seq, t, CacheMode::Store).unwrap();
        let edited: Vec<bool> = (0..64).map(|i| (i / 8 + i % 8) % 2 == 0).collect();
        let mask = RegionMask::from_grid(edited, 8, 8, 0.5).unwrap();
        let store = snapshot(full.kv_snapshot.as_ref().unwrap(), &mask, 4).unwrap();
        let edited_rows = seq.noise.select_rows(mask.edited_index());
        let region_v = model
            .region_forward(&seq.prompt, &edited_rows, mask.edited_index(), t, &store)
            .unwrap();
        let full_at_edited = full.velocity.select_rows(mask.edited_index());
        assert!(
            region_v.max_abs_diff(&full_at_edited) <= 1e-5,
            "gap {}",
            region_v.max_abs_diff(&full_at_edited)
        );
    }

    #[test]
    fn inject_with_empty_store_is_cache_miss() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 3).unwrap();
        let seq = SegmentedSequence::region(Mat::zeros(2, 16), Mat::zeros(4, 16)).unwrap();
        let store = KVStore::empty();
        assert!(matches!(
            model.forward(&seq, 0.5, CacheMode::Inject(&store)),
            Err(crate::error::Error::CacheMiss(_))
        ));
    }

    #[test]
    fn permutation_equivariant_over_noise_tokens() {
        let cfg = small_cfg();
        let model = ToyDiT::new(cfg, 11).unwrap();
        let seq = make_seq(13, &cfg, 4, 4, 3);
        let base = model.forward(&seq, 0.4, CacheMode::Plain).unwrap().velocity;

        // Reverse the noise tokens (and their grid mapping and aligned
        // instruction rows) and compare row-for-row.
        let n = seq.noise_len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted_noise = seq.noise.select_rows(&perm);
        let permuted_instr = seq.instruction.select_rows(&perm);
        let cell_of: Vec<usize> = (0..n).map(|i| n - 1 - i).collect();
        let grid = GridMap::permuted(4, 4, cell_of).unwrap();
        let permuted_seq =
            SegmentedSequence::editing(seq.prompt.clone(), permuted_noise, permuted_instr, grid)
                .unwrap();
        let permuted_out = model
            .forward(&permuted_seq, 0.4, CacheMode::Plain)
            .unwrap()
            .velocity;
        for (i, &p) in perm.iter().enumerate() {
            let orig = base.row(p);
            let got = permuted_out.row(i);
            for (a, b) in orig.iter().zip(got.iter()) {
                assert!((a - b).abs() <= 1e-5, "row {i}: {a} vs {b}");
            }
        }
    }
}
