//! Region-instruction key/value cache.
//!
//! A full-sequence forward snapshots the per-layer attention keys and values
//! of the unedited-region and instruction tokens. Later region-restricted
//! forwards run only prompt + edited rows and splice the cached rows back
//! into every attention layer:
//!
//! ```text
//! softmax([Q_P, Q_E] . [K_P, K_E, K_U_cached, K_I_cached]^T / sqrt(d_head))
//!     . [V_P, V_E, V_U_cached, V_I_cached]
//! ```
//!
//! Prompt keys/values are always recomputed fresh; only U and I rows come
//! from the cache.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid_arg, Error, Result};
use crate::math;
use crate::partition::RegionMask;
use crate::tensor::Mat;

/// Keys and values of one attention layer over some row set.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKv {
    pub k: Mat,
    pub v: Mat,
}

/// Per-layer K/V of a full [prompt, noise, instruction] forward, before any
/// region slicing. Produced by a velocity model run in store mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSequenceKv {
    pub layers: Vec<LayerKv>,
    /// Row layout of each layer's K/V matrices.
    pub prompt_len: usize,
    pub noise_len: usize,
    pub instruction_len: usize,
}

impl FullSequenceKv {
    pub fn total_rows(&self) -> usize {
        self.prompt_len + self.noise_len + self.instruction_len
    }
}

/// Cached K/V rows for the unedited-region and instruction tokens of every
/// layer, replaced atomically as a whole.
#[derive(Debug, Clone, PartialEq)]
pub struct KVStore {
    layers: Vec<StoreLayer>,
    snapshot_step: usize,
    populated: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct StoreLayer {
    k_unedited: Mat,
    v_unedited: Mat,
    k_instruction: Mat,
    v_instruction: Mat,
}

impl KVStore {
    /// An empty store; any retrieval attempt reports a cache miss.
    pub fn empty() -> Self {
        KVStore {
            layers: Vec::new(),
            snapshot_step: 0,
            populated: false,
        }
    }

    pub fn populated(&self) -> bool {
        self.populated
    }

    /// Step index at which the producing full forward was taken.
    pub fn snapshot_step(&self) -> usize {
        self.snapshot_step
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    fn layer(&self, layer: usize) -> Result<&StoreLayer> {
        if !self.populated {
            return Err(Error::CacheMiss(String::from(
                "key/value store was never populated",
            )));
        }
        self.layers.get(layer).ok_or_else(|| {
            invalid_arg!("layer {layer} out of range ({} layers)", self.layers.len())
        })
    }

    pub fn unedited_rows(&self, layer: usize) -> Result<(&Mat, &Mat)> {
        let l = self.layer(layer)?;
        Ok((&l.k_unedited, &l.v_unedited))
    }

    pub fn instruction_rows(&self, layer: usize) -> Result<(&Mat, &Mat)> {
        let l = self.layer(layer)?;
        Ok((&l.k_instruction, &l.v_instruction))
    }
}

/// Slice a full-sequence KV snapshot down to the unedited-region and
/// instruction rows. Prompt and edited rows are dropped; they are recomputed
/// fresh on every region step.
pub fn snapshot(full: &FullSequenceKv, mask: &RegionMask, step: usize) -> Result<KVStore> {
    if mask.len() != full.noise_len {
        return Err(invalid_arg!(
            "mask covers {} tokens but the sequence has {} noise tokens",
            mask.len(),
            full.noise_len
        ));
    }
    let unedited_rows: Vec<usize> = mask
        .unedited_index()
        .iter()
        .map(|&i| full.prompt_len + i)
        .collect();
    let instruction_rows: Vec<usize> = (0..full.instruction_len)
        .map(|i| full.prompt_len + full.noise_len + i)
        .collect();
    let layers = full
        .layers
        .iter()
        .map(|l| StoreLayer {
            k_unedited: l.k.select_rows(&unedited_rows),
            v_unedited: l.v.select_rows(&unedited_rows),
            k_instruction: l.k.select_rows(&instruction_rows),
            v_instruction: l.v.select_rows(&instruction_rows),
        })
        .collect();
    Ok(KVStore {
        layers,
        snapshot_step: step,
        populated: true,
    })
}

/// Multi-head attention of fresh prompt+edited queries against fresh
/// prompt+edited K/V concatenated with the cached unedited and instruction
/// rows, in that order. Returns one output row per query row.
pub fn region_attention(
    q: &Mat,
    k_fresh: &Mat,
    v_fresh: &Mat,
    store: &KVStore,
    layer: usize,
    heads: usize,
) -> Result<Mat> {
    // Queries and fresh keys/values are projections of the same rows, so
    // every softmax denominator includes the fresh prompt and edited keys;
    // no output row can be served purely from the cache.
    if k_fresh.rows() != q.rows() || v_fresh.rows() != q.rows() {
        return Err(invalid_arg!(
            "fresh K/V must cover the {} query rows, got {} and {}",
            q.rows(),
            k_fresh.rows(),
            v_fresh.rows()
        ));
    }
    let (k_u, v_u) = store.unedited_rows(layer)?;
    let (k_i, v_i) = store.instruction_rows(layer)?;
    let k_all = Mat::vstack(&[k_fresh, k_u, k_i])?;
    let v_all = Mat::vstack(&[v_fresh, v_u, v_i])?;
    multi_head_attention(q, &k_all, &v_all, heads)
}

/// Plain scaled dot-product attention with the channel dimension split into
/// `heads` equal slices. Scaling uses the per-head dimension.
pub fn multi_head_attention(q: &Mat, k: &Mat, v: &Mat, heads: usize) -> Result<Mat> {
    let d = q.cols();
    if d == 0 || heads == 0 || !d.is_multiple_of(heads) {
        return Err(invalid_arg!(
            "channel count {d} not divisible into {heads} heads"
        ));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(invalid_arg!(
            "attention shape mismatch: q {}x{}, k {}x{}, v {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        ));
    }
    if k.rows() == 0 {
        return Err(invalid_arg!("attention needs at least one key row"));
    }
    let head_dim = d / heads;
    let scale = 1.0 / math::sqrtf(head_dim as f32);
    let mut out = Mat::zeros(q.rows(), d);
    for h in 0..heads {
        let lo = h * head_dim;
        let hi = lo + head_dim;
        for row in 0..q.rows() {
            let q_h = &q.row(row)[lo..hi];
            // Scores against every key row, numerically stabilized softmax.
            let mut scores: Vec<f32> = Vec::with_capacity(k.rows());
            let mut max_score = f32::NEG_INFINITY;
            for kr in 0..k.rows() {
                let k_h = &k.row(kr)[lo..hi];
                let mut dot = 0.0f32;
                for (a, b) in q_h.iter().zip(k_h.iter()) {
                    dot += a * b;
                }
                let s = dot * scale;
                scores.push(s);
                max_score = max_score.max(s);
            }
            let mut denom = 0.0f32;
            for s in scores.iter_mut() {
                *s = math::expf(*s - max_score);
                denom += *s;
            }
            let out_row = &mut out.row_mut(row)[lo..hi];
            for (kr, &w) in scores.iter().enumerate() {
                let p = w / denom;
                for (o, &val) in out_row.iter_mut().zip(v.row(kr)[lo..hi].iter()) {
                    *o += p * val;
                }
            }
        }
    }
    Ok(out)
}
