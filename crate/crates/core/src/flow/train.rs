//! End-to-end flow training.
//!
//! Minimizes `L = l2 * MSE(x0, xhat) + ls * (1 - SSIM(x0, xhat))
//! + lp * Lp(x0, xhat) + ln * Ln(F(Z_T), W*, M)` through the whole
//! differentiable pipeline: inversion (precomputed, no parameters upstream),
//! FFT, flow, masked replacement, inverse FFT, and all DDIM generation steps.
//! Adam updates the flow parameters and every conv layer is spectrally
//! renormalized after each step. Checkpoints are snapshotted at a fixed step
//! interval and the lowest-loss one is returned.
//!
//! `Ln` is the negative mean squared distance between the masked original
//! spectrum and the masked learned watermark, `-(1/(w*h)) sum_M |F(Z_T) - W*|^2`:
//! pushing the watermark away from typical latent spectra is what buys
//! post-attack separability.
//!
//! The perceptual term uses a fixed seeded random conv feature extractor
//! (three layers, frozen) with squared feature distances at every depth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::diffusion::{
    bind_predictor, ddim_generate_node, ddim_invert, NoisePredictor, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::fft::{fft2_centered, ifft2_centered};
use crate::flow::FlowPair;
use crate::opt::Adam;
use crate::tensor::{ComplexTensor, RealTensor};
use crate::watermark::{inject_ring_key, CircularMask, InjectScope, RingKey};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowTrainConfig {
    pub lambda2: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_n: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub epochs: usize,
    pub checkpoint_interval: usize,
    pub seed: u64,
    pub hidden: usize,
    pub k_blocks: usize,
    pub lipschitz: f64,
    pub spectral_iters: usize,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            lambda2: 10.0,
            lambda_s: 0.1,
            lambda_p: 1.0,
            lambda_n: 1e-2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch: 2,
            epochs: 5,
            checkpoint_interval: 50,
            seed: 0,
            hidden: crate::flow::DEFAULT_HIDDEN,
            k_blocks: crate::flow::DEFAULT_BLOCKS,
            lipschitz: crate::flow::DEFAULT_LIPSCHITZ,
            spectral_iters: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: usize,
    pub loss: f64,
}

/// Plain evaluation of the detectability loss
/// `Ln = -(1/(w*h)) sum_M |spec - w_star|^2` on single planes.
pub fn loss_n_value(
    zt_last_spec: &ComplexTensor,
    w_star: &ComplexTensor,
    mask: &CircularMask,
) -> Result<f64> {
    zt_last_spec.check_same_shape(w_star)?;
    let (_, h, w) = zt_last_spec.shape();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask.contains(y, x) {
                let (ar, ai) = zt_last_spec.at(0, y, x);
                let (br, bi) = w_star.at(0, y, x);
                total += (ar - br) * (ar - br) + (ai - bi) * (ai - bi);
            }
        }
    }
    Ok(-total / (h * w) as f64)
}

/// Fixed random conv feature extractor for the perceptual term. Frozen after
/// seeding; never trained.
#[derive(Debug, Clone)]
pub struct PerceptualNet {
    pub channels: usize,
    pub hidden: usize,
    weights: [RealTensor; 3],
    biases: [RealTensor; 3],
}

impl PerceptualNet {
    pub fn init(seed: u64, channels: usize) -> Self {
        let hidden = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |cout: usize, cin: usize| {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let data: Vec<f64> = (0..cout * cin * 9)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * std
                })
                .collect();
            RealTensor::from_vec((cout * cin, 3, 3), data).expect("perceptual weight")
        };
        let weights = [mk(hidden, channels), mk(hidden, hidden), mk(hidden, hidden)];
        PerceptualNet {
            channels,
            hidden,
            weights,
            biases: [
                RealTensor::zeros((hidden, 1, 1)),
                RealTensor::zeros((hidden, 1, 1)),
                RealTensor::zeros((hidden, 1, 1)),
            ],
        }
    }

    /// Summed squared feature distances over the three depths, as a tape node.
    pub fn distance_node(&self, tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut wa = a;
        let mut wb = b;
        let mut total: Option<NodeId> = None;
        for (w, bias) in self.weights.iter().zip(&self.biases) {
            let wn = tape.leaf(w.clone());
            let bn = tape.leaf(bias.clone());
            wa = tape.conv2d(wa, wn, Some(bn), self.hidden, 3, 1)?;
            wa = tape.elu(wa);
            wb = tape.conv2d(wb, wn, Some(bn), self.hidden, 3, 1)?;
            wb = tape.elu(wb);
            let d = tape.mse(wa, wb)?;
            total = Some(match total {
                None => d,
                Some(acc) => tape.add(acc, d)?,
            });
        }
        Ok(total.expect("three layers"))
    }
}

/// Everything precomputed per training image: the parameter-free prefix of
/// the pipeline (inversion, spectra, injection).
pub struct PreparedImage {
    pub x0: RealTensor,
    /// Flow input: the injected spectrum stack, split into parts.
    pub injected_re: RealTensor,
    pub injected_im: RealTensor,
    /// `(1 - M) * injected[last]`: the constant half of the masked combine.
    pub keep_re: RealTensor,
    pub keep_im: RealTensor,
    /// Original (pre-injection) last-channel spectrum for the Ln loss.
    pub zt_last_re: RealTensor,
    pub zt_last_im: RealTensor,
    /// Latent with the last channel zeroed; the generated latent is this
    /// plus the scattered watermarked channel.
    pub base_latent: RealTensor,
}

/// Run the parameter-free prefix once per image.
pub fn prepare_image(
    x0: &RealTensor,
    key: &RingKey,
    mask: &CircularMask,
    scope: InjectScope,
    predictor: &NoisePredictor,
    sched: &NoiseSchedule,
) -> Result<PreparedImage> {
    let (c, h, w) = x0.shape();
    let z_t = ddim_invert(x0, predictor, sched)?;
    let spectra = fft2_centered(&ComplexTensor::from_real(&z_t))?;
    let injected = inject_ring_key(&spectra, key, mask, scope)?;
    let last = injected.channel_tensor(c - 1);
    let comp = mask.complement_plane();
    let keep_re = last.real().zip_map(&comp, |v, m| v * m)?;
    let keep_im = last.imag().zip_map(&comp, |v, m| v * m)?;

    let mut base_latent = match scope {
        InjectScope::LastChannel => z_t.clone(),
        InjectScope::AllChannels => {
            let mut t = RealTensor::zeros((c, h, w));
            for ch in 0..c - 1 {
                let plane = ifft2_centered(&injected.channel_tensor(ch))?;
                t.channel_mut(ch).copy_from_slice(plane.re());
            }
            t
        }
    };
    base_latent.channel_mut(c - 1).fill(0.0);

    let zt_last = spectra.channel_tensor(c - 1);
    Ok(PreparedImage {
        x0: x0.clone(),
        injected_re: injected.real(),
        injected_im: injected.imag(),
        keep_re,
        keep_im,
        zt_last_re: zt_last.real(),
        zt_last_im: zt_last.imag(),
        base_latent,
    })
}

/// Build one image's loss subgraph on the tape. Returns the scalar loss node.
#[allow(clippy::too_many_arguments)]
fn image_loss_node(
    tape: &mut Tape,
    prep: &PreparedImage,
    pair: &FlowPair,
    bind_re: &crate::flow::FlowNetBinding,
    bind_im: &crate::flow::FlowNetBinding,
    predictor: &NoisePredictor,
    pred_bind: &crate::diffusion::PredictorBinding,
    percept: &PerceptualNet,
    mask_plane: NodeId,
    sched: &NoiseSchedule,
    cfg: &FlowTrainConfig,
) -> Result<NodeId> {
    let (c, h, w) = prep.x0.shape();

    let spec_re = tape.leaf(prep.injected_re.clone());
    let spec_im = tape.leaf(prep.injected_im.clone());
    let w_star = crate::flow::apply_flow_node(tape, pair, bind_re, bind_im, spec_re, spec_im)?;

    // Masked replacement of the last channel: keep + M * W*.
    let keep_re = tape.leaf(prep.keep_re.clone());
    let keep_im = tape.leaf(prep.keep_im.clone());
    let masked_wre = tape.mul(w_star.re, mask_plane)?;
    let masked_wim = tape.mul(w_star.im, mask_plane)?;
    let comb_re = tape.add(keep_re, masked_wre)?;
    let comb_im = tape.add(keep_im, masked_wim)?;
    let combined = tape.complex_join(comb_re, comb_im)?;

    // Back to the spatial domain; the latent keeps only the real part.
    let z_last = tape.fft2_centered_node(combined, true)?;
    let z_scattered = tape.scatter_channel(z_last.re, c, c - 1)?;
    let base = tape.leaf(prep.base_latent.clone());
    let z_marked = tape.add(base, z_scattered)?;

    let x_hat = ddim_generate_node(tape, z_marked, predictor, pred_bind, sched)?;
    let x0 = tape.leaf(prep.x0.clone());

    let l2 = tape.mse(x_hat, x0)?;
    let ssim = tape.ssim(x_hat, x0)?;
    let ls = tape.affine(ssim, -1.0, 1.0);
    let lp = percept.distance_node(tape, x_hat, x0)?;

    // Ln on the masked spectra.
    let zt_re = tape.leaf(prep.zt_last_re.clone());
    let zt_im = tape.leaf(prep.zt_last_im.clone());
    let dre = tape.sub(w_star.re, zt_re)?;
    let dim = tape.sub(w_star.im, zt_im)?;
    let dre2 = tape.square(dre);
    let dim2 = tape.square(dim);
    let sq = tape.add(dre2, dim2)?;
    let msum = tape.masked_sum(sq, mask_plane)?;
    let ln = tape.scale(msum, -1.0 / (h * w) as f64);

    let t1 = tape.lin(l2, ls, cfg.lambda2, cfg.lambda_s)?;
    let t2 = tape.lin(lp, ln, cfg.lambda_p, cfg.lambda_n)?;
    tape.add(t1, t2)
}

/// Train the flow pair. Returns the lowest-loss checkpoint and the step/loss
/// log. Deterministic under a fixed seed.
pub fn train_flow(
    images: &[RealTensor],
    key: &RingKey,
    mask: &CircularMask,
    scope: InjectScope,
    predictor: &NoisePredictor,
    sched: &NoiseSchedule,
    cfg: &FlowTrainConfig,
) -> Result<(FlowPair, Vec<CheckpointEntry>)> {
    if images.is_empty() {
        return Err(Error::config("flow training needs a nonempty dataset"));
    }
    let (c, h, w) = images[0].shape();
    let mut pair = FlowPair::init(cfg.seed, c, cfg.hidden, cfg.k_blocks, cfg.lipschitz, h, w);
    let percept = PerceptualNet::init(cfg.seed.wrapping_add(7_777), c);

    let prepared: Vec<PreparedImage> = images
        .iter()
        .map(|x0| prepare_image(x0, key, mask, scope, predictor, sched))
        .collect::<Result<_>>()?;

    let sizes: Vec<usize> = pair.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..images.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(f64, FlowPair)> = None;
    let mut step = 0usize;
    let total_steps = cfg.epochs * images.len().div_ceil(cfg.batch.max(1));

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut tape = Tape::new();
            let bind_re = pair.real.bind(&mut tape, true);
            let bind_im = pair.imag.bind(&mut tape, true);
            let pred_bind = bind_predictor(&mut tape, predictor);
            let mask_plane = tape.leaf(mask.as_plane());

            let mut loss: Option<NodeId> = None;
            for &idx in chunk {
                let l = image_loss_node(
                    &mut tape,
                    &prepared[idx],
                    &pair,
                    &bind_re,
                    &bind_im,
                    predictor,
                    &pred_bind,
                    &percept,
                    mask_plane,
                    sched,
                    cfg,
                )?;
                loss = Some(match loss {
                    None => l,
                    Some(acc) => tape.add(acc, l)?,
                });
            }
            let total = tape.scale(loss.expect("nonempty batch"), 1.0 / chunk.len() as f64);
            let loss_val = tape.scalar_value(total);
            if !loss_val.is_finite() {
                return Err(Error::Training(format!(
                    "flow loss became non-finite at step {step}"
                )));
            }
            log.push(CheckpointEntry {
                step,
                loss: loss_val,
            });

            // Snapshot the parameters that achieved this loss.
            let at_interval = cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0;
            let is_last = step + 1 == total_steps;
            if at_interval || is_last {
                match &best {
                    Some((best_loss, _)) if *best_loss <= loss_val => {}
                    _ => best = Some((loss_val, pair.clone())),
                }
            }

            let grads = tape.backward(total)?;
            let leaf_ids: Vec<NodeId> = bind_re
                .layers
                .iter()
                .chain(bind_im.layers.iter())
                .flat_map(|&(wid, bid)| [wid, bid])
                .collect();
            let gvals: Vec<RealTensor> = leaf_ids
                .iter()
                .map(|&id| grads.leaf_grad(&tape, id))
                .collect();
            let mut params = pair.params_mut();
            adam.step(&mut params, &gvals);
            if cfg.spectral_iters > 0 {
                pair.normalize(cfg.spectral_iters);
            }
            step += 1;
        }
    }

    let (_, chosen) = best.ok_or_else(|| Error::Training("no training steps ran".into()))?;
    Ok((chosen, log))
}
