//! Deterministic pseudo-random numbers (splitmix64). Hand-rolled so that the
//! same seed yields bit-identical streams on every platform and toolchain,
//! which the reproducibility guarantees depend on.

use crate::math;

/// Splitmix64 generator with Box-Muller normals.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 24 bits of mantissa.
    pub fn next_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Standard normal via Box-Muller. Two uniforms per draw, no spare kept,
    /// so the stream position is a pure function of the draw count.
    pub fn next_normal(&mut self) -> f32 {
        let mut u1 = self.next_f32();
        let u2 = self.next_f32();
        if u1 <= 0.0 {
            u1 = f32::MIN_POSITIVE;
        }
        let r = math::sqrtf(-2.0 * math::ln(u1 as f64) as f32);
        r * math::cosf(2.0 * core::f32::consts::PI * u2)
    }
}
