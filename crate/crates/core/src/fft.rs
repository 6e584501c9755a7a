//! Centered 2-D Fourier transforms with orthonormal scaling.
//!
//! The convention throughout the crate puts the zero-frequency bin at the
//! plane center `(h/2, w/2)` in *both* domains: `fft2_centered` is
//! shift -> radix-2 FFT -> shift with `1/sqrt(hw)` scaling, so a unit impulse
//! at the spatial center maps to a constant plane and `ifft2_centered` is the
//! exact inverse. Mask coordinates measured from the plane center therefore
//! apply literally to spectra produced here.
//!
//! Only power-of-two sizes >= 8 are supported.

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

fn check_pow2(n: usize, axis: &str) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::dim(format!(
            "{axis} = {n} must be a power of two >= 8"
        )));
    }
    Ok(())
}

/// In-place iterative radix-2 Cooley-Tukey on interleaved re/im slices.
/// No scaling is applied here; callers handle normalization.
fn fft1_inplace(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let (wlen_re, wlen_im) = (ang.cos(), ang.sin());
        let half = len / 2;
        let mut i = 0;
        while i < n {
            let mut w_re = 1.0;
            let mut w_im = 0.0;
            for k in 0..half {
                let a = i + k;
                let b = a + half;
                let (ur, ui) = (re[a], im[a]);
                let vr = re[b] * w_re - im[b] * w_im;
                let vi = re[b] * w_im + im[b] * w_re;
                re[a] = ur + vr;
                im[a] = ui + vi;
                re[b] = ur - vr;
                im[b] = ui - vi;
                let nw_re = w_re * wlen_re - w_im * wlen_im;
                w_im = w_re * wlen_im + w_im * wlen_re;
                w_re = nw_re;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Swap plane halves along both axes. For even sizes fftshift and ifftshift
/// coincide, and all supported sizes are even.
fn shift_plane(re: &mut [f64], im: &mut [f64], h: usize, w: usize) {
    let (hh, hw) = (h / 2, w / 2);
    for y in 0..hh {
        for x in 0..w {
            let a = y * w + x;
            let b = ((y + hh) % h) * w + (x + hw) % w;
            re.swap(a, b);
            im.swap(a, b);
        }
    }
}

fn transform_plane(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) {
    shift_plane(re, im, h, w);
    // Rows.
    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    for y in 0..h {
        row_re.copy_from_slice(&re[y * w..(y + 1) * w]);
        row_im.copy_from_slice(&im[y * w..(y + 1) * w]);
        fft1_inplace(&mut row_re, &mut row_im, inverse);
        re[y * w..(y + 1) * w].copy_from_slice(&row_re);
        im[y * w..(y + 1) * w].copy_from_slice(&row_im);
    }
    // Columns.
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        fft1_inplace(&mut col_re, &mut col_im, inverse);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
    shift_plane(re, im, h, w);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in re.iter_mut().chain(im.iter_mut()) {
        *v *= scale;
    }
}

fn transform(plane: &ComplexTensor, inverse: bool) -> Result<ComplexTensor> {
    let (c, h, w) = plane.shape();
    check_pow2(h, "height")?;
    check_pow2(w, "width")?;
    let mut out = plane.clone();
    let n = h * w;
    for ch in 0..c {
        let mut cre = out.re()[ch * n..(ch + 1) * n].to_vec();
        let mut cim = out.im()[ch * n..(ch + 1) * n].to_vec();
        transform_plane(&mut cre, &mut cim, h, w, inverse);
        out.re_mut()[ch * n..(ch + 1) * n].copy_from_slice(&cre);
        out.im_mut()[ch * n..(ch + 1) * n].copy_from_slice(&cim);
    }
    Ok(out)
}

/// Centered orthonormal 2-D FFT, applied independently per channel.
pub fn fft2_centered(plane: &ComplexTensor) -> Result<ComplexTensor> {
    transform(plane, false)
}

/// Exact inverse of [`fft2_centered`].
pub fn ifft2_centered(plane: &ComplexTensor) -> Result<ComplexTensor> {
    transform(plane, true)
}

/// Dense centered-DFT matrix `C = P F P / sqrt(n)` with `P` the half-swap
/// permutation, as `(re, im)` row-major `n x n` arrays.
///
/// `C` is symmetric and unitary; 2-D transforms factor as `Y = C_h X C_w`,
/// which is how the training tape differentiates through the transform using
/// only matrix products. Values agree with [`fft2_centered`] to roundoff.
pub fn dft_matrix_centered(n: usize, inverse: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pow2(n, "size")?;
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = 1.0 / (n as f64).sqrt();
    let half = n / 2;
    for j in 0..n {
        for k in 0..n {
            // Row/column indices after the half-swap on both sides.
            let jj = (j + half) % n;
            let kk = (k + half) % n;
            let ang = sign * 2.0 * std::f64::consts::PI * (jj as f64) * (kk as f64) / n as f64;
            re[j * n + k] = ang.cos() * scale;
            im[j * n + k] = ang.sin() * scale;
        }
    }
    Ok((re, im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(seed: u64, h: usize, w: usize) -> ComplexTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let re: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let im: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ComplexTensor::from_parts((1, h, w), re, im).unwrap()
    }

    /// O(n^4) direct evaluation of the same centered orthonormal transform.
    fn direct_dft_centered(plane: &ComplexTensor, inverse: bool) -> ComplexTensor {
        let (_, h, w) = plane.shape();
        let sign = if inverse { 1.0 } else { -1.0 };
        let scale = 1.0 / ((h * w) as f64).sqrt();
        let (cy, cx) = (h / 2, w / 2);
        let mut out = ComplexTensor::zeros((1, h, w));
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let (pr, pi) = plane.at(0, y, x);
                        // Frequencies and positions measured from the center.
                        let fu = (u as f64 - cy as f64) * (y as f64 - cy as f64) / h as f64;
                        let fv = (v as f64 - cx as f64) * (x as f64 - cx as f64) / w as f64;
                        let ang = sign * 2.0 * std::f64::consts::PI * (fu + fv);
                        let (c, s) = (ang.cos(), ang.sin());
                        sr += pr * c - pi * s;
                        si += pr * s + pi * c;
                    }
                }
                out.set(0, u, v, sr * scale, si * scale);
            }
        }
        out
    }

    fn max_abs_diff(a: &ComplexTensor, b: &ComplexTensor) -> f64 {
        a.re()
            .iter()
            .zip(b.re())
            .chain(a.im().iter().zip(b.im()))
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
    }

    #[test]
    fn rejects_non_power_of_two() {
        let t = ComplexTensor::zeros((1, 12, 16));
        assert!(matches!(fft2_centered(&t), Err(Error::Dimension(_))));
        let t = ComplexTensor::zeros((1, 16, 4));
        assert!(ifft2_centered(&t).is_err());
    }

    #[test]
    fn centered_impulse_gives_constant_plane() {
        let (h, w) = (16, 16);
        let mut t = ComplexTensor::zeros((1, h, w));
        t.set(0, h / 2, w / 2, 1.0, 0.0);
        let f = fft2_centered(&t).unwrap();
        let expect = 1.0 / ((h * w) as f64).sqrt();
        for y in 0..h {
            for x in 0..w {
                let (re, im) = f.at(0, y, x);
                assert!((re - expect).abs() < 1e-12, "re at ({y},{x}) = {re}");
                assert!(im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_ones_gives_single_center_bin() {
        let (h, w) = (16, 32);
        let ones = ComplexTensor::from_real(&RealTensor::filled((1, h, w), 1.0));
        let f = fft2_centered(&ones).unwrap();
        let expect = ((h * w) as f64).sqrt();
        for y in 0..h {
            for x in 0..w {
                let (re, im) = f.at(0, y, x);
                if (y, x) == (h / 2, w / 2) {
                    assert!((re - expect).abs() < 1e-10);
                } else {
                    assert!(re.abs() < 1e-10, "leak at ({y},{x}): {re}");
                }
                assert!(im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matches_direct_dft_oracle() {
        let t = random_plane(11, 16, 16);
        let fast = fft2_centered(&t).unwrap();
        let direct = direct_dft_centered(&t, false);
        assert!(max_abs_diff(&fast, &direct) <= 1e-10);

        let fast_inv = ifft2_centered(&t).unwrap();
        let direct_inv = direct_dft_centered(&t, true);
        assert!(max_abs_diff(&fast_inv, &direct_inv) <= 1e-10);
    }

    #[test]
    fn round_trip_is_identity() {
        let t = random_plane(3, 32, 32);
        let back = ifft2_centered(&fft2_centered(&t).unwrap()).unwrap();
        assert!(max_abs_diff(&t, &back) <= 1e-10);
    }

    #[test]
    fn dc_only_spectrum_is_constant_plane() {
        let (h, w) = (16, 16);
        let mut s = ComplexTensor::zeros((1, h, w));
        s.set(0, h / 2, w / 2, ((h * w) as f64).sqrt(), 0.0);
        let x = ifft2_centered(&s).unwrap();
        for i in 0..h * w {
            assert!((x.re()[i] - 1.0).abs() < 1e-12);
            assert!(x.im()[i].abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_and_linearity() {
        let a = random_plane(5, 16, 16);
        let b = random_plane(6, 16, 16);
        let fa = fft2_centered(&a).unwrap();
        assert!((a.sq_norm() - fa.sq_norm()).abs() / a.sq_norm() <= 1e-10);

        // fft(2a - 3b) == 2 fft(a) - 3 fft(b)
        let mut combo = ComplexTensor::zeros((1, 16, 16));
        for i in 0..a.len() {
            combo.re_mut()[i] = 2.0 * a.re()[i] - 3.0 * b.re()[i];
            combo.im_mut()[i] = 2.0 * a.im()[i] - 3.0 * b.im()[i];
        }
        let fc = fft2_centered(&combo).unwrap();
        let fb = fft2_centered(&b).unwrap();
        for i in 0..fc.len() {
            let er = fc.re()[i] - (2.0 * fa.re()[i] - 3.0 * fb.re()[i]);
            let ei = fc.im()[i] - (2.0 * fa.im()[i] - 3.0 * fb.im()[i]);
            assert!(er.abs() <= 1e-10 && ei.abs() <= 1e-10);
        }
    }

    #[test]
    fn conjugate_symmetry_for_real_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = ComplexTensor::from_real(&RealTensor::from_vec((1, 16, 16), data).unwrap());
        let f = fft2_centered(&t).unwrap();
        let (cy, cx) = (8i64, 8i64);
        for dy in -7..=7i64 {
            for dx in -7..=7i64 {
                let (ar, ai) = f.at(0, (cy + dy) as usize, (cx + dx) as usize);
                let (br, bi) = f.at(0, (cy - dy) as usize, (cx - dx) as usize);
                assert!((ar - br).abs() < 1e-10);
                assert!((ai + bi).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dft_matrix_agrees_with_fft() {
        let n = 16;
        let (cr, ci) = dft_matrix_centered(n, false).unwrap();
        let t = random_plane(7, n, n);
        let f = fft2_centered(&t).unwrap();
        // Y = C X C  (C symmetric): compute with complex matmuls.
        let mm = |ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]| {
            let mut or_ = vec![0.0; n * n];
            let mut oi = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let (mut sr, mut si) = (0.0, 0.0);
                    for k in 0..n {
                        let (a_r, a_i) = (ar[i * n + k], ai[i * n + k]);
                        let (b_r, b_i) = (br[k * n + j], bi[k * n + j]);
                        sr += a_r * b_r - a_i * b_i;
                        si += a_r * b_i + a_i * b_r;
                    }
                    or_[i * n + j] = sr;
                    oi[i * n + j] = si;
                }
            }
            (or_, oi)
        };
        let (t1r, t1i) = mm(&cr, &ci, t.re(), t.im());
        let (yr, yi) = mm(&t1r, &t1i, &cr, &ci);
        for i in 0..n * n {
            assert!((yr[i] - f.re()[i]).abs() < 1e-10);
            assert!((yi[i] - f.im()[i]).abs() < 1e-10);
        }
    }
}
