//! Region-aware rectified-flow sampling.
//!
//! Instruction-driven image editing usually changes a few regions and leaves
//! the rest alone. This crate exploits that: after a short stabilization
//! phase it splits the noise tokens into edited and unedited regions, jumps
//! the unedited region straight to later timesteps (straight trajectories
//! make single jumps exact), iterates only the edited region through
//! region-restricted attention backed by a key/value cache, and skips model
//! calls entirely when a decayed cached velocity is still accurate enough.
//!
//! The crate is `no_std`-compatible (requires `alloc`); everything that
//! touches files, clocks, or a CLI lives in the companion `regione-bench`
//! crate.
//!
//! Layout:
//! - [`schedule`]: timestep grids, Euler updates, single-jump estimates
//! - [`model`]: the velocity-model contract, a seeded toy transformer, and
//!   an analytic field with closed-form trajectories
//! - [`partition`]: edited/unedited token classification plus morphology
//! - [`rikv`]: per-layer K/V snapshots and region-restricted attention
//! - [`avd`]: the decayed velocity cache and its gating criterion
//! - [`pipeline`]: the staged sampler and the vanilla baseline
//! - [`metrics`]: PSNR/SSIM and speedup accounting

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod avd;
pub mod error;
pub(crate) mod math;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod rikv;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Mat;
