//! Quality metrics between accelerated and baseline outputs, plus the
//! speedup arithmetic for reports. PSNR and SSIM are computed on latents at
//! this scale; reports label them accordingly.

use alloc::vec::Vec;

use crate::error::{invalid_arg, Result};
use crate::math;
use crate::pipeline::RunReport;
use crate::tensor::Mat;

/// Quality/efficiency summary of an accelerated run against its baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Positive infinity when the outputs are identical.
    pub psnr_db: f64,
    pub ssim: f64,
    pub token_step_speedup: f64,
    pub wall_speedup: f64,
}

/// Mean squared error, accumulated in f64.
pub fn mse(a: &Mat, b: &Mat) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(invalid_arg!(
            "mse shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    if a.data().is_empty() {
        return Err(invalid_arg!("mse of empty tensors"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// 10 log10(range^2 / mse); positive infinity iff mse = 0.
pub fn psnr_from_mse(mse: f64, data_range: f64) -> Result<f64> {
    if data_range.is_nan() || data_range <= 0.0 {
        return Err(invalid_arg!(
            "data range must be positive, got {data_range}"
        ));
    }
    if mse < 0.0 {
        return Err(invalid_arg!("mse cannot be negative, got {mse}"));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * math::log10(data_range * data_range / mse))
}

/// Peak signal-to-noise ratio between two equally shaped tensors.
pub fn psnr(a: &Mat, b: &Mat, data_range: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, data_range)
}

/// Structural-similarity parameters. Defaults follow the common reference
/// settings: 11x11 Gaussian window with sigma 1.5, k1 = 0.01, k2 = 0.03.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_window(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut w = Vec::with_capacity(window * window);
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let g = math::exp(-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma));
            w.push(g);
            sum += g;
        }
    }
    for g in w.iter_mut() {
        *g /= sum;
    }
    w
}

/// Mean local SSIM of one channel; the matrix is treated as an H x W image.
pub fn ssim(a: &Mat, b: &Mat, opts: &SsimOptions) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(invalid_arg!(
            "ssim shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ));
    }
    let (h, w) = (a.rows(), a.cols());
    let win = opts.window;
    if win == 0 || win.is_multiple_of(2) {
        return Err(invalid_arg!("window must be odd and positive, got {win}"));
    }
    if h < win || w < win {
        return Err(invalid_arg!(
            "image {h}x{w} smaller than the {win}x{win} window"
        ));
    }
    if opts.data_range.is_nan() || opts.data_range <= 0.0 {
        return Err(invalid_arg!("data range must be positive"));
    }
    let weights = gaussian_window(win, opts.sigma);
    let c1 = (opts.k1 * opts.data_range) * (opts.k1 * opts.data_range);
    let c2 = (opts.k2 * opts.data_range) * (opts.k2 * opts.data_range);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let mut mu_a = 0.0f64;
            let mut mu_b = 0.0f64;
            let mut aa = 0.0f64;
            let mut bb = 0.0f64;
            let mut ab = 0.0f64;
            let mut wi = 0usize;
            for dy in 0..win {
                let ra = a.row(y0 + dy);
                let rb = b.row(y0 + dy);
                for dx in 0..win {
                    let wgt = weights[wi];
                    wi += 1;
                    let va = ra[x0 + dx] as f64;
                    let vb = rb[x0 + dx] as f64;
                    mu_a += wgt * va;
                    mu_b += wgt * vb;
                    aa += wgt * va * va;
                    bb += wgt * vb * vb;
                    ab += wgt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM averaged over channels; each channel is an H x W matrix.
pub fn ssim_multichannel(a: &[Mat], b: &[Mat], opts: &SsimOptions) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid_arg!(
            "channel counts differ or are empty: {} vs {}",
            a.len(),
            b.len()
        ));
    }
    let mut total = 0.0;
    for (ca, cb) in a.iter().zip(b.iter()) {
        total += ssim(ca, cb, opts)?;
    }
    Ok(total / a.len() as f64)
}

/// Token-step and wall-clock speedups of `fast` relative to `base`.
pub fn speedup(fast: &RunReport, base: &RunReport) -> Result<(f64, f64)> {
    if fast.token_steps_actual == 0 {
        return Err(invalid_arg!("accelerated run recorded zero token-steps"));
    }
    if fast.wall_seconds <= 0.0 {
        return Err(invalid_arg!("accelerated run recorded no wall time"));
    }
    Ok((
        base.token_steps_actual as f64 / fast.token_steps_actual as f64,
        base.wall_seconds / fast.wall_seconds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Stage, StepKind, StepRecord};
    use crate::rng::Rng;

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Mat::from_fn(3, 3, |r, c| (r + c) as f32);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_formula_values() {
        // 10 log10(1 / 0.01) = 20 dB, and range 2 with mse 0.04 also gives 20.
        assert!((psnr_from_mse(0.01, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr_from_mse(0.04, 2.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_on_dyadic_difference() {
        // Constant difference of 0.125 gives mse 0.015625 exactly in f64.
        let a = Mat::zeros(4, 4);
        let b = Mat::from_fn(4, 4, |_, _| 0.125);
        let expected = 10.0 * (1.0f64 / 0.015625).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn psnr_shape_mismatch_rejected() {
        assert!(psnr(&Mat::zeros(2, 2), &Mat::zeros(2, 3), 1.0).is_err());
        assert!(psnr_from_mse(0.1, 0.0).is_err());
    }

    #[test]
    fn psnr_symmetric() {
        let mut rng = Rng::new(2);
        let a = Mat::random_normal(5, 5, 1.0, &mut rng);
        let b = Mat::random_normal(5, 5, 1.0, &mut rng);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_identical_images_is_one() {
        let mut rng = Rng::new(3);
        let a = Mat::random_normal(16, 16, 1.0, &mut rng);
        let s = ssim(&a, &a, &SsimOptions::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_constant_shift_below_one() {
        let mut rng = Rng::new(4);
        let a = Mat::random_normal(16, 16, 0.2, &mut rng);
        let b = Mat::from_fn(16, 16, |r, c| a.get(r, c) + 0.3);
        let s = ssim(&a, &b, &SsimOptions::default()).unwrap();
        assert!(s < 1.0, "shifted image must lose luminance similarity: {s}");
        assert!(s > -1.0);
    }

    #[test]
    fn ssim_single_window_matches_direct_sum() {
        // On an 11x11 image there is exactly one window; evaluate the SSIM
        // formula here by direct summation as the oracle.
        let mut rng = Rng::new(5);
        let a = Mat::random_normal(11, 11, 0.5, &mut rng);
        let b = Mat::random_normal(11, 11, 0.5, &mut rng);
        let opts = SsimOptions::default();
        let got = ssim(&a, &b, &opts).unwrap();

        let mut weights = Vec::new();
        let mut sum = 0.0f64;
        for dy in -5i32..=5 {
            for dx in -5i32..=5 {
                let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                weights.push(g);
                sum += g;
            }
        }
        for g in weights.iter_mut() {
            *g /= sum;
        }
        let (mut mu_a, mut mu_b, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, w) in weights.iter().enumerate() {
            let va = a.data()[i] as f64;
            let vb = b.data()[i] as f64;
            mu_a += w * va;
            mu_b += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
        }
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        let expected = ((2.0 * mu_a * mu_b + c1) * (2.0 * (ab - mu_a * mu_b) + c2))
            / ((mu_a * mu_a + mu_b * mu_b + c1) * ((aa - mu_a * mu_a) + (bb - mu_b * mu_b) + c2));
        assert!((got - expected).abs() <= 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn ssim_small_image_rejected() {
        let a = Mat::zeros(8, 8);
        assert!(ssim(&a, &a, &SsimOptions::default()).is_err());
    }

    #[test]
    fn ssim_symmetric() {
        let mut rng = Rng::new(6);
        let a = Mat::random_normal(12, 12, 1.0, &mut rng);
        let b = Mat::random_normal(12, 12, 1.0, &mut rng);
        let opts = SsimOptions::default();
        let ab = ssim(&a, &b, &opts).unwrap();
        let ba = ssim(&b, &a, &opts).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    fn report_with(tokens: u64, wall: f64) -> RunReport {
        RunReport {
            final_latent: Mat::zeros(1, 1),
            mask: None,
            full_forward_count: 1,
            region_forward_count: 0,
            cached_step_count: 0,
            token_steps_vanilla: tokens,
            token_steps_actual: tokens,
            wall_seconds: wall,
            step_log: vec![StepRecord {
                step_index: 1,
                stage: Stage::Vanilla,
                kind: StepKind::Full,
                model_tokens: tokens,
            }],
        }
    }

    #[test]
    fn speedup_identical_reports() {
        let a = report_with(100, 2.0);
        let (tok, wall) = speedup(&a, &a).unwrap();
        assert_eq!(tok, 1.0);
        assert_eq!(wall, 1.0);
    }

    #[test]
    fn speedup_half_tokens_is_two() {
        let base = report_with(100, 4.0);
        let fast = report_with(50, 2.0);
        let (tok, wall) = speedup(&fast, &base).unwrap();
        assert_eq!(tok, 2.0);
        assert_eq!(wall, 2.0);
    }

    #[test]
    fn speedup_zero_denominator_rejected() {
        let base = report_with(100, 4.0);
        let zero = report_with(0, 0.0);
        assert!(speedup(&zero, &base).is_err());
    }
}
