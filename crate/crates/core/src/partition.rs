//! Adaptive region partition.
//!
//! Classifies every noise token as edited or unedited by extrapolating the
//! current latent straight to t = 0 and comparing each estimated token with
//! the instruction-image token sitting on the same grid cell (cosine over
//! the channel dimension, unedited iff similarity > eta). The raw mask is
//! then regularized morphologically: a closing fills pinholes, an opening
//! removes speckles.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid_arg, Result};
use crate::math;
use crate::schedule::{one_step_estimate, LatentState, TimestepSchedule};
use crate::tensor::Mat;

/// Maps noise-token indices onto cells of an H x W grid.
///
/// The default layout is the identity (token i lives in row-major cell i);
/// permuted layouts are supported so that token order and spatial position
/// can be decoupled.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    height: usize,
    width: usize,
    cell_of: Vec<usize>,
}

impl GridMap {
    pub fn identity(height: usize, width: usize) -> Self {
        GridMap {
            height,
            width,
            cell_of: (0..height * width).collect(),
        }
    }

    /// Arbitrary token-to-cell permutation.
    pub fn permuted(height: usize, width: usize, cell_of: Vec<usize>) -> Result<Self> {
        let n = height * width;
        if cell_of.len() != n {
            return Err(invalid_arg!(
                "grid map covers {} tokens, expected {}",
                cell_of.len(),
                n
            ));
        }
        let mut seen = vec![false; n];
        for &c in &cell_of {
            if c >= n || seen[c] {
                return Err(invalid_arg!("grid map is not a permutation of 0..{n}"));
            }
            seen[c] = true;
        }
        Ok(GridMap {
            height,
            width,
            cell_of,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.cell_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_of.is_empty()
    }

    pub fn cell_of(&self, token: usize) -> usize {
        self.cell_of[token]
    }
}

/// Edited/unedited split of the noise tokens, kept both as an H x W boolean
/// grid (true = edited) and as sorted token-index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: Vec<bool>,
    height: usize,
    width: usize,
    edited_index: Vec<usize>,
    unedited_index: Vec<usize>,
    eta: f32,
}

impl RegionMask {
    /// Build from a grid under the identity token layout.
    pub fn from_grid(grid: Vec<bool>, height: usize, width: usize, eta: f32) -> Result<Self> {
        if grid.len() != height * width {
            return Err(invalid_arg!(
                "grid has {} cells, expected {}x{}",
                grid.len(),
                height,
                width
            ));
        }
        let map = GridMap::identity(height, width);
        Ok(Self::from_grid_with_map(grid, &map, eta))
    }

    fn from_grid_with_map(grid: Vec<bool>, map: &GridMap, eta: f32) -> Self {
        let mut edited_index = Vec::new();
        let mut unedited_index = Vec::new();
        for token in 0..map.len() {
            if grid[map.cell_of(token)] {
                edited_index.push(token);
            } else {
                unedited_index.push(token);
            }
        }
        RegionMask {
            grid,
            height: map.height(),
            width: map.width(),
            edited_index,
            unedited_index,
            eta,
        }
    }

    /// Total noise-token count.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major edited grid, true = edited.
    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    /// Sorted indices of edited noise tokens.
    pub fn edited_index(&self) -> &[usize] {
        &self.edited_index
    }

    /// Sorted indices of unedited noise tokens.
    pub fn unedited_index(&self) -> &[usize] {
        &self.unedited_index
    }

    /// Threshold that produced this mask.
    pub fn eta(&self) -> f32 {
        self.eta
    }

    pub fn edited_fraction(&self) -> f64 {
        if self.grid.is_empty() {
            return 0.0;
        }
        self.edited_index.len() as f64 / self.grid.len() as f64
    }
}

/// Per-token cosine similarity over the channel dimension. Tokens where
/// either side has zero norm get similarity 0, which classifies them as
/// edited under any threshold above zero.
pub fn token_cosine(x_hat0: &Mat, instruction: &Mat) -> Result<Vec<f32>> {
    if x_hat0.rows() != instruction.rows() || x_hat0.cols() != instruction.cols() {
        return Err(invalid_arg!(
            "cosine shape mismatch: {}x{} vs {}x{}",
            x_hat0.rows(),
            x_hat0.cols(),
            instruction.rows(),
            instruction.cols()
        ));
    }
    let mut sims = Vec::with_capacity(x_hat0.rows());
    for r in 0..x_hat0.rows() {
        let a = x_hat0.row(r);
        let b = instruction.row(r);
        let mut dot = 0.0f32;
        let mut na = 0.0f32;
        let mut nb = 0.0f32;
        for (x, y) in a.iter().zip(b.iter()) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            sims.push(0.0);
        } else {
            sims.push(dot / (math::sqrtf(na) * math::sqrtf(nb)));
        }
    }
    Ok(sims)
}

/// Raw threshold split: a token is unedited iff its similarity strictly
/// exceeds eta.
pub fn threshold_partition(sims: &[f32], eta: f32, map: &GridMap) -> Result<RegionMask> {
    if sims.len() != map.len() {
        return Err(invalid_arg!(
            "{} similarities for a {}-token grid",
            sims.len(),
            map.len()
        ));
    }
    let mut grid = vec![false; map.len()];
    for (token, &s) in sims.iter().enumerate() {
        let unedited = s > eta;
        grid[map.cell_of(token)] = !unedited;
    }
    Ok(RegionMask::from_grid_with_map(grid, map, eta))
}

/// Hole-filling closing followed by a speckle-removing opening on the edited
/// grid, with a square (2r+1)^2 structuring element applied `iterations`
/// times per erosion/dilation.
///
/// Border conventions are per operation: the closing's erosion treats
/// out-of-grid cells as edited so border-touching regions survive, while the
/// opening's erosion treats them as unedited, making it the union of
/// structuring-element translates inside the mask. Under these conventions
/// every single-token hole fills and every single-token speckle vanishes,
/// including next to corners (no uniform convention or the reverse order
/// achieves both), constant grids at least as large as the element are fixed
/// points, and the composite is idempotent.
pub fn morphological_clean(
    mask: &RegionMask,
    map: &GridMap,
    se_radius: usize,
    iterations: usize,
) -> RegionMask {
    let (h, w) = (mask.height, mask.width);
    if se_radius == 0 || iterations == 0 || h == 0 || w == 0 {
        return mask.clone();
    }
    let mut grid = mask.grid.clone();
    // Closing: dilate then erode.
    for _ in 0..iterations {
        grid = dilate(&grid, h, w, se_radius);
    }
    for _ in 0..iterations {
        grid = erode(&grid, h, w, se_radius, true);
    }
    // Opening: erode then dilate. The dilation needs no spill room because
    // the opening never leaves the original mask's extent.
    for _ in 0..iterations {
        grid = erode(&grid, h, w, se_radius, false);
    }
    for _ in 0..iterations {
        grid = dilate(&grid, h, w, se_radius);
    }
    RegionMask::from_grid_with_map(grid, map, mask.eta)
}

fn erode(grid: &[bool], h: usize, w: usize, r: usize, out_of_grid: bool) -> Vec<bool> {
    let ri = r as isize;
    let mut out = vec![false; grid.len()];
    for y in 0..h as isize {
        'cell: for x in 0..w as isize {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (ny, nx) = (y + dy, x + dx);
                    let inside = ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize;
                    let value = if inside {
                        grid[ny as usize * w + nx as usize]
                    } else {
                        out_of_grid
                    };
                    if !value {
                        continue 'cell;
                    }
                }
            }
            out[y as usize * w + x as usize] = true;
        }
    }
    out
}

fn dilate(grid: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let ri = r as isize;
    let mut out = vec![false; grid.len()];
    for y in 0..h as isize {
        'cell: for x in 0..w as isize {
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (ny, nx) = (y + dy, x + dx);
                    // Out-of-grid counts as unedited (neutral for dilation).
                    if ny >= 0
                        && ny < h as isize
                        && nx >= 0
                        && nx < w as isize
                        && grid[ny as usize * w + nx as usize]
                    {
                        out[y as usize * w + x as usize] = true;
                        continue 'cell;
                    }
                }
            }
        }
    }
    out
}

/// Full adaptive partition: one-step estimate of the final latent from the
/// last full velocity, cosine against the instruction tokens, threshold,
/// then morphological cleanup. An all-edited or all-unedited outcome is
/// valid output.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_region_partition(
    state: &LatentState,
    v_last: &Mat,
    instruction: &Mat,
    map: &GridMap,
    schedule: &TimestepSchedule,
    eta: f32,
    se_radius: usize,
    se_iterations: usize,
) -> Result<RegionMask> {
    let x_hat0 = one_step_estimate(state, v_last, 0, schedule)?;
    let sims = token_cosine(&x_hat0, instruction)?;
    let raw = threshold_partition(&sims, eta, map)?;
    Ok(morphological_clean(&raw, map, se_radius, se_iterations))
}
