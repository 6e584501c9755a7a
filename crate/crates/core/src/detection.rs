//! Statistical watermark verification.
//!
//! The detector inverts the image back to a latent, takes the centered
//! spectrum of the last channel as `y`, estimates the per-image scale
//! `sigma^2` from the masked cells, and scores
//! `eta = (1/sigma^2) sum |M(W* - y)|^2`. Under the no-watermark null, `eta`
//! follows a non-central chi-squared with `q = sum M` degrees of freedom and
//! non-centrality `lambda = (1/sigma^2) sum |M W*|^2`, so
//! `p = Pr(chi2_{q,lambda} <= eta)` is small exactly when the masked
//! spectrum sits close to the watermark. Detection probability is `1 - p`.

use serde::{Deserialize, Serialize};

use crate::chi2::noncentral_chi2_cdf;
use crate::diffusion::{ddim_invert, NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::fft::fft2_centered;
use crate::flow::{apply_flow, FlowPair};
use crate::tensor::{ComplexTensor, RealTensor};
use crate::watermark::{circular_mask, inject_ring_key, ring_key, CircularMask, WatermarkRecord};

/// Numerical floor for the sigma^2 estimate on degenerate inputs.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// How the detector obtains the learned watermark plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectMode {
    /// Use the `W*` persisted in the record at embed time.
    #[default]
    Stored,
    /// Zero-storage: rebuild the flow input from the recovered spectrum
    /// stack with the ring key injected, then apply the flow.
    Recompute,
}

/// Degrees-of-freedom convention for the chi-squared null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DofConvention {
    /// `q = sum M` (one per masked cell).
    #[default]
    MaskCells,
    /// `q = 2 sum M` (two real quadratic terms per complex cell).
    TwoPerCell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub sigma2: f64,
    pub eta: f64,
    pub dof: u32,
    pub lambda: f64,
    pub p_value: f64,
    pub detection_probability: f64,
    pub threshold: f64,
    pub decision: bool,
}

/// Invert the image and return the centered spectrum of the last latent
/// channel (`1 x h x w`).
pub fn recover_y(
    image: &RealTensor,
    predictor: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<ComplexTensor> {
    let stack = recover_spectrum_stack(image, predictor, sched)?;
    Ok(stack.channel_tensor(stack.channels() - 1))
}

/// Invert the image and return the centered spectra of all latent channels.
pub fn recover_spectrum_stack(
    image: &RealTensor,
    predictor: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<ComplexTensor> {
    let z = ddim_invert(image, predictor, sched)?;
    fft2_centered(&ComplexTensor::from_real(&z))
}

/// Mean squared magnitude of the masked cells. Degenerate all-zero regions
/// clamp to [`SIGMA2_FLOOR`].
pub fn estimate_sigma2(y: &ComplexTensor, mask: &CircularMask) -> Result<f64> {
    let (_, h, w) = y.shape();
    if mask.height() != h || mask.width() != w {
        return Err(Error::dim("mask does not match spectrum"));
    }
    let count = mask.count();
    if count == 0 {
        return Err(Error::config("sigma^2 estimate needs a nonempty mask"));
    }
    let mut total = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            if mask.contains(yy, xx) {
                let (re, im) = y.at(0, yy, xx);
                total += re * re + im * im;
            }
        }
    }
    Ok((total / count as f64).max(SIGMA2_FLOOR))
}

/// `eta = (1/sigma^2) sum_M |W* - y|^2`.
pub fn eta_score(
    y: &ComplexTensor,
    w_star: &ComplexTensor,
    mask: &CircularMask,
    sigma2: f64,
) -> f64 {
    let (_, h, w) = y.shape();
    let mut total = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            if mask.contains(yy, xx) {
                let (ar, ai) = w_star.at(0, yy, xx);
                let (br, bi) = y.at(0, yy, xx);
                total += (ar - br) * (ar - br) + (ai - bi) * (ai - bi);
            }
        }
    }
    total / sigma2
}

/// Non-centrality `lambda = (1/sigma^2) sum_M |W*|^2`.
pub fn noncentrality(w_star: &ComplexTensor, mask: &CircularMask, sigma2: f64) -> f64 {
    let (_, h, w) = w_star.shape();
    let mut total = 0.0;
    for yy in 0..h {
        for xx in 0..w {
            if mask.contains(yy, xx) {
                let (re, im) = w_star.at(0, yy, xx);
                total += re * re + im * im;
            }
        }
    }
    total / sigma2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub mode: DetectMode,
    pub dof: DofConvention,
    /// Decision threshold on detection probability (`p*`).
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            mode: DetectMode::Stored,
            dof: DofConvention::MaskCells,
            threshold: 0.9,
        }
    }
}

/// Full detection: recover the latent spectrum, obtain `W*` per the mode,
/// run the chi-squared test, and decide at the threshold.
pub fn detect(
    image: &RealTensor,
    record: &WatermarkRecord,
    flow: &FlowPair,
    predictor: &NoisePredictor,
    sched: &NoiseSchedule,
    cfg: &DetectConfig,
) -> Result<DetectionReport> {
    let (_, h, w) = image.shape();
    let mask = circular_mask(h, w, record.radius)?;
    let stack = recover_spectrum_stack(image, predictor, sched)?;
    let y = stack.channel_tensor(stack.channels() - 1);

    let w_star = match cfg.mode {
        DetectMode::Stored => record
            .w_star
            .clone()
            .ok_or_else(|| Error::config("record has no stored W*; use recompute mode"))?,
        DetectMode::Recompute => {
            let key = ring_key(record.key_seed, record.radius, h, w)?;
            let injected = inject_ring_key(&stack, &key, &mask, record.inject_scope)?;
            apply_flow(&injected, flow)?
        }
    };
    score(&y, &w_star, &mask, cfg)
}

/// Scoring half of detection, exposed for callers that already hold the
/// recovered spectrum and watermark plane.
pub fn score(
    y: &ComplexTensor,
    w_star: &ComplexTensor,
    mask: &CircularMask,
    cfg: &DetectConfig,
) -> Result<DetectionReport> {
    let sigma2 = estimate_sigma2(y, mask)?;
    let eta = eta_score(y, w_star, mask, sigma2);
    let lambda = noncentrality(w_star, mask, sigma2);
    let q = match cfg.dof {
        DofConvention::MaskCells => mask.count() as u32,
        DofConvention::TwoPerCell => 2 * mask.count() as u32,
    };
    let p_value = noncentral_chi2_cdf(eta, q, lambda)?;
    let detection_probability = 1.0 - p_value;
    Ok(DetectionReport {
        sigma2,
        eta,
        dof: q,
        lambda,
        p_value,
        detection_probability,
        threshold: cfg.threshold,
        decision: detection_probability > cfg.threshold,
    })
}
