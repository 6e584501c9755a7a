//! Lipschitz-constrained residual flow networks.
//!
//! Each network is a stack of residual blocks `x -> x + g(x)` where `g` is a
//! three-layer CNN with kernel sizes `[3, 1, 3]` and ELU activations. Every
//! conv layer is rescaled so its power-iteration spectral-norm estimate stays
//! at or below the Lipschitz target (0.9), which makes each block a
//! contraction-plus-identity and gives a convergent fixed-point inverse. The
//! final conv of every block starts at zero, so a freshly initialized network
//! is exactly the identity.
//!
//! Two such networks process the real and imaginary parts of a latent
//! spectrum; the last output channel of each becomes the learned watermark
//! plane.

pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{conv, ComplexNode, NodeId, Tape};
use crate::error::{Error, Result};
use crate::ltns;
use crate::tensor::{ComplexTensor, RealTensor};

pub const DEFAULT_LIPSCHITZ: f64 = 0.9;
pub const DEFAULT_BLOCKS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 16;

/// One spectrally-normalized conv layer.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: RealTensor,
    pub b: RealTensor,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
    /// Persisted power-iteration state (input-shaped).
    power_u: Vec<f64>,
}

impl ConvLayer {
    fn new(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, pad: usize, h: usize, w: usize, zero: bool) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let data: Vec<f64> = (0..cout * cin * k * k)
            .map(|_| {
                if zero {
                    0.0
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    z * std
                }
            })
            .collect();
        let power_u: Vec<f64> = (0..cin * h * w).map(|_| rng.sample(StandardNormal)).collect();
        ConvLayer {
            w: RealTensor::from_vec((cout * cin, k, k), data).expect("layer shape"),
            b: RealTensor::zeros((cout, 1, 1)),
            cin,
            cout,
            k,
            pad,
            power_u,
        }
    }

    fn apply(&self, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        conv::conv2d_forward(
            x,
            self.cin,
            h,
            w,
            self.w.data(),
            self.cout,
            self.k,
            self.pad,
            Some(self.b.data()),
            out,
        );
    }

    /// Power-iteration spectral norm estimate of the conv operator at the
    /// given spatial size. Updates the persisted iteration vector.
    pub fn spectral_norm_estimate(&mut self, h: usize, w: usize, iterations: usize) -> f64 {
        let n_in = self.cin * h * w;
        if self.power_u.len() != n_in {
            self.power_u = vec![1.0; n_in];
        }
        let ho = conv::conv_out(h, self.k, self.pad);
        let wo = conv::conv_out(w, self.k, self.pad);
        let n_out = self.cout * ho * wo;
        let mut u = std::mem::take(&mut self.power_u);
        normalize(&mut u);
        let mut v = vec![0.0; n_out];
        let mut sigma = 0.0;
        for _ in 0..iterations.max(1) {
            v.fill(0.0);
            conv::conv2d_forward(&u, self.cin, h, w, self.w.data(), self.cout, self.k, self.pad, None, &mut v);
            sigma = norm(&v);
            if sigma == 0.0 {
                break;
            }
            for x in &mut v {
                *x /= sigma;
            }
            u.fill(0.0);
            conv::conv2d_grad_input(&v, self.cout, ho, wo, self.w.data(), self.cin, self.k, self.pad, &mut u, h, w);
            normalize(&mut u);
        }
        self.power_u = u;
        sigma
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Residual block: `x + g(x)` with `g = conv3 . elu . conv1 . elu . conv3`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub layers: Vec<ConvLayer>,
}

impl ResidualBlock {
    fn init(rng: &mut ChaCha8Rng, channels: usize, hidden: usize, h: usize, w: usize, zero: bool) -> Self {
        ResidualBlock {
            layers: vec![
                ConvLayer::new(rng, channels, hidden, 3, 1, h, w, zero),
                ConvLayer::new(rng, hidden, hidden, 1, 0, h, w, zero),
                // Zero-initialized last layer: g(x) = 0 at start.
                ConvLayer::new(rng, hidden, channels, 3, 1, h, w, true),
            ],
        }
    }

    /// The residual branch `g(x)` alone.
    pub fn g(&self, x: &RealTensor) -> RealTensor {
        let (c, h, w) = x.shape();
        let hid = self.layers[0].cout;
        let mut h1 = vec![0.0; hid * h * w];
        self.layers[0].apply(x.data(), h, w, &mut h1);
        for v in &mut h1 {
            *v = elu(*v);
        }
        let mut h2 = vec![0.0; hid * h * w];
        self.layers[1].apply(&h1, h, w, &mut h2);
        for v in &mut h2 {
            *v = elu(*v);
        }
        let mut out = vec![0.0; c * h * w];
        self.layers[2].apply(&h2, h, w, &mut out);
        RealTensor::from_vec((c, h, w), out).expect("block output")
    }

    pub fn forward(&self, x: &RealTensor) -> RealTensor {
        x.add(&self.g(x)).expect("residual add")
    }

    /// Solve `x + g(x) = y` by fixed-point iteration.
    pub fn invert(&self, y: &RealTensor) -> Result<RealTensor> {
        let mut x = y.clone();
        for _ in 0..100 {
            let next = y.sub(&self.g(&x))?;
            let delta = next.sub(&x)?.max_abs();
            x = next;
            if delta <= 1e-10 {
                return Ok(x);
            }
        }
        Err(Error::numeric(
            "fixed-point inversion did not converge; residual branch is not a contraction",
        ))
    }
}

#[inline]
fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

/// A stack of residual blocks operating on fixed-size plane stacks.
#[derive(Debug, Clone)]
pub struct FlowNet {
    pub blocks: Vec<ResidualBlock>,
    pub channels: usize,
    pub hidden: usize,
    pub lipschitz: f64,
    pub height: usize,
    pub width: usize,
}

impl FlowNet {
    pub fn init(
        seed: u64,
        channels: usize,
        hidden: usize,
        k_blocks: usize,
        lipschitz: f64,
        h: usize,
        w: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..k_blocks)
            .map(|_| ResidualBlock::init(&mut rng, channels, hidden, h, w, false))
            .collect();
        let mut net = FlowNet {
            blocks,
            channels,
            hidden,
            lipschitz,
            height: h,
            width: w,
        };
        // Project the random layers inside the Lipschitz ball right away.
        spectral_normalize(&mut net, 30);
        net
    }

    /// All-zero residual branches: the exact identity map.
    pub fn identity(channels: usize, hidden: usize, k_blocks: usize, h: usize, w: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let blocks = (0..k_blocks)
            .map(|_| ResidualBlock::init(&mut rng, channels, hidden, h, w, true))
            .collect();
        FlowNet {
            blocks,
            channels,
            hidden,
            lipschitz: DEFAULT_LIPSCHITZ,
            height: h,
            width: w,
        }
    }

    pub fn forward(&self, x: &RealTensor) -> Result<RealTensor> {
        if x.shape() != (self.channels, self.height, self.width) {
            return Err(Error::dim(format!(
                "flow input shape {:?} does not match net {:?}",
                x.shape(),
                (self.channels, self.height, self.width)
            )));
        }
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward(&cur);
        }
        Ok(cur)
    }

    /// Invert the whole block stack (blocks applied in reverse order).
    pub fn invert(&self, y: &RealTensor) -> Result<RealTensor> {
        let mut cur = y.clone();
        for block in self.blocks.iter().rev() {
            cur = block.invert(&cur)?;
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&RealTensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for l in &b.layers {
                out.push(&l.w);
                out.push(&l.b);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            for l in &mut b.layers {
                out.push(&mut l.w);
                out.push(&mut l.b);
            }
        }
        out
    }
}

/// Rescale every conv layer whose power-iteration estimate exceeds the
/// Lipschitz target. Iteration vectors persist across calls.
pub fn spectral_normalize(net: &mut FlowNet, iterations: usize) {
    let (h, w) = (net.height, net.width);
    let target = net.lipschitz;
    for block in &mut net.blocks {
        for layer in &mut block.layers {
            let sigma = layer.spectral_norm_estimate(h, w, iterations);
            if sigma > target {
                let scale = target / sigma;
                let scaled = layer.w.scale(scale);
                layer.w = scaled;
            }
        }
    }
}

/// The H_real / H_imag pair.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub real: FlowNet,
    pub imag: FlowNet,
}

impl FlowPair {
    pub fn init(
        seed: u64,
        channels: usize,
        hidden: usize,
        k_blocks: usize,
        lipschitz: f64,
        h: usize,
        w: usize,
    ) -> Self {
        FlowPair {
            real: FlowNet::init(seed.wrapping_mul(2).wrapping_add(1), channels, hidden, k_blocks, lipschitz, h, w),
            imag: FlowNet::init(seed.wrapping_mul(2).wrapping_add(2), channels, hidden, k_blocks, lipschitz, h, w),
        }
    }

    /// Identity pair: the learned watermark degenerates to the plain ring
    /// key, which is the built-in baseline variant in the harness.
    pub fn identity(channels: usize, h: usize, w: usize) -> Self {
        FlowPair {
            real: FlowNet::identity(channels, DEFAULT_HIDDEN, DEFAULT_BLOCKS, h, w),
            imag: FlowNet::identity(channels, DEFAULT_HIDDEN, DEFAULT_BLOCKS, h, w),
        }
    }

    pub fn normalize(&mut self, iterations: usize) {
        spectral_normalize(&mut self.real, iterations);
        spectral_normalize(&mut self.imag, iterations);
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut out = self.real.params_mut();
        out.extend(self.imag.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&RealTensor> {
        let mut out = self.real.params();
        out.extend(self.imag.params());
        out
    }
}

/// Apply the flow pair to a full latent spectrum and take the last output
/// channel of each network as the learned watermark plane.
pub fn apply_flow(spectrum: &ComplexTensor, pair: &FlowPair) -> Result<ComplexTensor> {
    let (c, h, w) = spectrum.shape();
    if c != pair.real.channels {
        return Err(Error::dim(format!(
            "spectrum has {c} channels, flow expects {}",
            pair.real.channels
        )));
    }
    let wr = pair.real.forward(&spectrum.real())?;
    let wi = pair.imag.forward(&spectrum.imag())?;
    ComplexTensor::from_parts(
        (1, h, w),
        wr.channel(c - 1).to_vec(),
        wi.channel(c - 1).to_vec(),
    )
}

/// Tape-bound parameters of one flow network.
pub struct FlowNetBinding {
    pub layers: Vec<(NodeId, NodeId)>,
}

impl FlowNet {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FlowNetBinding {
        let mut layers = Vec::new();
        for block in &self.blocks {
            for layer in &block.layers {
                let w = if trainable {
                    tape.trainable(layer.w.clone())
                } else {
                    tape.leaf(layer.w.clone())
                };
                let b = if trainable {
                    tape.trainable(layer.b.clone())
                } else {
                    tape.leaf(layer.b.clone())
                };
                layers.push((w, b));
            }
        }
        FlowNetBinding { layers }
    }

    /// Differentiable forward pass through bound parameters.
    pub fn forward_node(&self, tape: &mut Tape, bind: &FlowNetBinding, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for (bi, block) in self.blocks.iter().enumerate() {
            let mut g = cur;
            for (li, layer) in block.layers.iter().enumerate() {
                let (w, b) = bind.layers[bi * block.layers.len() + li];
                g = tape.conv2d(g, w, Some(b), layer.cout, layer.k, layer.pad)?;
                if li + 1 < block.layers.len() {
                    g = tape.elu(g);
                }
            }
            cur = tape.add(cur, g)?;
        }
        Ok(cur)
    }
}

/// Differentiable [`apply_flow`]: both nets bound on the same tape.
pub fn apply_flow_node(
    tape: &mut Tape,
    pair: &FlowPair,
    bind_re: &FlowNetBinding,
    bind_im: &FlowNetBinding,
    spectrum_re: NodeId,
    spectrum_im: NodeId,
) -> Result<ComplexNode> {
    let c = pair.real.channels;
    let wr = pair.real.forward_node(tape, bind_re, spectrum_re)?;
    let wi = pair.imag.forward_node(tape, bind_im, spectrum_im)?;
    let wr_last = tape.select_channel(wr, c - 1)?;
    let wi_last = tape.select_channel(wi, c - 1)?;
    tape.complex_join(wr_last, wi_last)
}

/// Save a flow pair as a checkpoint directory.
pub fn save_flow(
    dir: impl AsRef<std::path::Path>,
    pair: &FlowPair,
    meta: serde_json::Value,
) -> Result<()> {
    let mut named: Vec<(String, &RealTensor)> = Vec::new();
    for (net_name, net) in [("real", &pair.real), ("imag", &pair.imag)] {
        for (bi, block) in net.blocks.iter().enumerate() {
            for (li, layer) in block.layers.iter().enumerate() {
                named.push((format!("{net_name}.b{bi}.l{li}.w"), &layer.w));
                named.push((format!("{net_name}.b{bi}.l{li}.b"), &layer.b));
            }
        }
    }
    let mut meta = match meta {
        serde_json::Value::Object(m) => m,
        _ => return Err(Error::config("flow meta must be a JSON object")),
    };
    meta.insert("kind".into(), "flow".into());
    meta.insert("k_blocks".into(), pair.real.blocks.len().into());
    meta.insert("hidden".into(), pair.real.hidden.into());
    meta.insert("channels".into(), pair.real.channels.into());
    meta.insert("lipschitz_const".into(), pair.real.lipschitz.into());
    meta.insert("height".into(), pair.real.height.into());
    meta.insert("width".into(), pair.real.width.into());
    let refs: Vec<(&str, &RealTensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    ltns::write_checkpoint(dir, serde_json::Value::Object(meta), &refs)
}

/// Load a flow pair from a checkpoint directory.
pub fn load_flow(dir: impl AsRef<std::path::Path>) -> Result<FlowPair> {
    let (meta, tensors) = ltns::read_checkpoint(dir)?;
    if meta.get("kind").and_then(|v| v.as_str()) != Some("flow") {
        return Err(Error::config("checkpoint is not a flow checkpoint"));
    }
    let get = |k: &str| -> Result<u64> {
        meta.get(k)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::config(format!("flow manifest missing {k}")))
    };
    let k_blocks = get("k_blocks")? as usize;
    let hidden = get("hidden")? as usize;
    let channels = get("channels")? as usize;
    let h = get("height")? as usize;
    let w = get("width")? as usize;
    let lipschitz = meta
        .get("lipschitz_const")
        .and_then(|v| v.as_f64())
        .unwrap_or(DEFAULT_LIPSCHITZ);
    let mut pair = FlowPair {
        real: FlowNet::identity(channels, hidden, k_blocks, h, w),
        imag: FlowNet::identity(channels, hidden, k_blocks, h, w),
    };
    pair.real.lipschitz = lipschitz;
    pair.imag.lipschitz = lipschitz;
    let lookup: std::collections::HashMap<String, RealTensor> = tensors.into_iter().collect();
    for (net_name, net) in [("real", &mut pair.real), ("imag", &mut pair.imag)] {
        for (bi, block) in net.blocks.iter_mut().enumerate() {
            for (li, layer) in block.layers.iter_mut().enumerate() {
                let wkey = format!("{net_name}.b{bi}.l{li}.w");
                let bkey = format!("{net_name}.b{bi}.l{li}.b");
                layer.w = lookup
                    .get(&wkey)
                    .ok_or_else(|| Error::config(format!("flow checkpoint missing {wkey}")))?
                    .clone();
                layer.b = lookup
                    .get(&bkey)
                    .ok_or_else(|| Error::config(format!("flow checkpoint missing {bkey}")))?
                    .clone();
            }
        }
    }
    Ok(pair)
}
