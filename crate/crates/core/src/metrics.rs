//! Image-quality metrics: SSIM over uniform 8x8 windows, PSNR, MSE.
//!
//! SSIM uses unit dynamic range (images live in `[0,1]`), uniform 8x8 windows
//! at stride 1 without padding, and the standard stabilization constants
//! `C1 = (0.01)^2`, `C2 = (0.03)^2`. The score is the mean of the per-window
//! SSIM map over all channels. The same formula is available as a
//! differentiable graph node in [`crate::autodiff`].

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared error over all entries.
pub fn mse(a: &RealTensor, b: &RealTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB for unit peak value.
///
/// Identical inputs have zero MSE; that case returns `f64::INFINITY` as the
/// distinguished "identical" value.
pub fn psnr(a: &RealTensor, b: &RealTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Structural similarity index in `[-1, 1]`.
pub fn ssim(a: &RealTensor, b: &RealTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let (c, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = SSIM_WINDOW;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let inv_n = 1.0 / (k * k) as f64;

    let mut total = 0.0;
    for ch in 0..c {
        let pa = a.channel(ch);
        let pb = b.channel(ch);
        for y in 0..ho {
            for x in 0..wo {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    let row = (y + dy) * w + x;
                    for dx in 0..k {
                        let va = pa[row + dx];
                        let vb = pb[row + dx];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                let mu_a = sa * inv_n;
                let mu_b = sb * inv_n;
                let var_a = saa * inv_n - mu_a * mu_a;
                let var_b = sbb * inv_n - mu_b * mu_b;
                let cov = sab * inv_n - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
            }
        }
    }
    Ok(total / (c * ho * wo) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, shape: (usize, usize, usize)) -> RealTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2;
        RealTensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = RealTensor::zeros((1, 8, 8));
        let b = RealTensor::zeros((1, 8, 16));
        assert!(ssim(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let x = random_image(1, (2, 16, 16));
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(2, (1, 12, 12));
        let b = random_image(3, (1, 12, 12));
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_strongly_negative() {
        // 0/1 checkerboard against its inversion: every 8x8 window has means
        // 1/2, variances 1/4, covariance -1/4, so the per-window score is
        // (C2 - 1/2) / (C2 + 1/2) exactly. The constants keep it just above -1.
        let (h, w) = (16, 16);
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = ((x + y) % 2) as f64;
            }
        }
        let a = RealTensor::from_vec((1, h, w), data.clone()).unwrap();
        let b = a.map(|v| 1.0 - v);
        let expect = (SSIM_C2 - 0.5) / (SSIM_C2 + 0.5);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!(expect < -0.99);
    }

    /// Straight per-window reference that recomputes each window from scratch
    /// using explicit mean/variance passes instead of running sums.
    fn ssim_reference(a: &RealTensor, b: &RealTensor) -> f64 {
        let (c, h, w) = a.shape();
        let k = SSIM_WINDOW;
        let n = (k * k) as f64;
        let mut scores = Vec::new();
        for ch in 0..c {
            for y in 0..=(h - k) {
                for x in 0..=(w - k) {
                    let mut wa = Vec::new();
                    let mut wb = Vec::new();
                    for dy in 0..k {
                        for dx in 0..k {
                            wa.push(a.at(ch, y + dy, x + dx));
                            wb.push(b.at(ch, y + dy, x + dx));
                        }
                    }
                    let mu_a: f64 = wa.iter().sum::<f64>() / n;
                    let mu_b: f64 = wb.iter().sum::<f64>() / n;
                    let var_a: f64 = wa.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / n;
                    let var_b: f64 = wb.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / n;
                    let cov: f64 = wa
                        .iter()
                        .zip(&wb)
                        .map(|(&va, &vb)| (va - mu_a) * (vb - mu_b))
                        .sum::<f64>()
                        / n;
                    scores.push(
                        ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)),
                    );
                }
            }
        }
        scores.iter().sum::<f64>() / scores.len() as f64
    }

    #[test]
    fn ssim_matches_windowed_reference() {
        let a = random_image(7, (2, 14, 18));
        let b = random_image(8, (2, 14, 18));
        let fast = ssim(&a, &b).unwrap();
        let reference = ssim_reference(&a, &b);
        assert!((fast - reference).abs() <= 1e-8, "{fast} vs {reference}");
    }

    #[test]
    fn psnr_identical_is_sentinel() {
        let x = random_image(4, (1, 8, 8));
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_offset_is_20db() {
        let x = RealTensor::filled((1, 8, 8), 0.4);
        let y = RealTensor::filled((1, 8, 8), 0.5);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_direct_formula() {
        let a = random_image(10, (3, 8, 8));
        let b = random_image(11, (3, 8, 8));
        let m: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.len() as f64;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / m).log10()).abs() < 1e-12);
    }
}
