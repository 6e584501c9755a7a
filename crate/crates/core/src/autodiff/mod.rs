//! Minimal reverse-mode automatic differentiation over a fixed op set.
//!
//! The tape evaluates eagerly while the graph is built, so node creation
//! order is already a topological order and the backward pass is one reverse
//! sweep that visits each node exactly once. The op set is closed: linear
//! combination, elementwise product, matrix product, 2-D convolution,
//! per-channel bias, pointwise nonlinearities (ELU / reciprocal / square),
//! mean, masked sum, and MSE. Everything else in the crate - SSIM, the
//! centered Fourier transform, channel selection - is composed from these,
//! so a gradient check of the primitives covers the whole training pipeline.
//!
//! Complex values are carried as `(re, im)` node pairs; see [`ComplexNode`].

pub mod conv;

use crate::error::{Error, Result};
use crate::fft::dft_matrix_centered;
use crate::metrics::{SSIM_C1, SSIM_C2, SSIM_WINDOW};
use crate::tensor::{ComplexTensor, RealTensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Pointwise nonlinearity kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    /// Smooth unit-Lipschitz activation: `x` for `x > 0`, `exp(x) - 1` otherwise.
    Elu,
    /// `1 / x`.
    Recip,
    /// `x^2`.
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        trainable: bool,
    },
    /// `alpha * a + beta * b`
    Lin {
        a: NodeId,
        b: NodeId,
        alpha: f64,
        beta: f64,
    },
    /// `mul * x + add`; the additive constant is folded into the cached
    /// value at build time and does not appear in the adjoint.
    Affine {
        x: NodeId,
        mul: f64,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// `(1,m,k) x (1,k,n) -> (1,m,n)`
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        cout: usize,
        cin: usize,
        k: usize,
        pad: usize,
    },
    /// Broadcast a `(c,1,1)` bias over the spatial dims of `x`.
    BiasAdd {
        x: NodeId,
        b: NodeId,
    },
    Pointwise {
        x: NodeId,
        kind: Pointwise,
    },
    Mean {
        x: NodeId,
    },
    /// `sum(x * mask)` with a constant mask node.
    MaskedSum {
        x: NodeId,
        mask: NodeId,
    },
    /// `mean((a - b)^2)`
    Mse {
        a: NodeId,
        b: NodeId,
    },
}

struct Node {
    op: Op,
    value: RealTensor,
}

/// Reverse-mode tape. Build with the op methods, then call [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by a backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<RealTensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&RealTensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of a leaf; leaves not on any path to the output get zeros.
    pub fn leaf_grad(&self, tape: &Tape, id: NodeId) -> RealTensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => RealTensor::zeros(tape.value(id).shape()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &RealTensor {
        &self.nodes[id.0].value
    }

    /// Every trainable leaf on the tape, in creation order.
    pub fn trainable_leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { trainable: true }))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: RealTensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant (non-trainable) leaf.
    pub fn leaf(&mut self, value: RealTensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    /// Trainable leaf: its gradient is retained by [`Tape::backward`].
    pub fn trainable(&mut self, value: RealTensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(RealTensor::from_vec((1, 1, 1), vec![v]).expect("scalar"))
    }

    /// `alpha * a + beta * b` (elementwise, same shape).
    pub fn lin(&mut self, a: NodeId, b: NodeId, alpha: f64, beta: f64) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| alpha * x + beta * y)?;
        Ok(self.push(Op::Lin { a, b, alpha, beta }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.lin(a, b, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.lin(a, b, 1.0, -1.0)
    }

    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let value = self.value(x).map(|v| mul * v + add);
        self.push(Op::Affine { x, mul }, value)
    }

    pub fn scale(&mut self, x: NodeId, alpha: f64) -> NodeId {
        self.affine(x, alpha, 0.0)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    /// Matrix product of `(1,m,k)` and `(1,k,n)` tensors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, m, ka) = self.value(a).shape();
        let (cb, kb, n) = self.value(b).shape();
        if ca != 1 || cb != 1 || ka != kb {
            return Err(Error::dim(format!(
                "matmul shapes (1,{m},{ka}) x (1,{kb},{n}) invalid"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let value = RealTensor::from_vec((1, m, n), out)?;
        Ok(self.push(Op::MatMul { a, b }, value))
    }

    /// 2-D convolution; weight node holds `(cout*cin, k, k)`, bias `(cout,1,1)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        cout: usize,
        k: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (cin, h, width) = self.value(x).shape();
        let wshape = self.value(w).shape();
        if wshape != (cout * cin, k, k) {
            return Err(Error::dim(format!(
                "conv weight shape {wshape:?} does not match (cout*cin={}, k={k})",
                cout * cin
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != (cout, 1, 1) {
                return Err(Error::dim("conv bias must have shape (cout,1,1)"));
            }
        }
        if h + 2 * pad < k || width + 2 * pad < k {
            return Err(Error::dim("conv kernel larger than padded input"));
        }
        let ho = conv::conv_out(h, k, pad);
        let wo = conv::conv_out(width, k, pad);
        let mut out = vec![0.0; cout * ho * wo];
        let bias_slice = bias.map(|b| self.value(b).data().to_vec());
        conv::conv2d_forward(
            self.value(x).data(),
            cin,
            h,
            width,
            self.value(w).data(),
            cout,
            k,
            pad,
            bias_slice.as_deref(),
            &mut out,
        );
        let value = RealTensor::from_vec((cout, ho, wo), out)?;
        Ok(self.push(
            Op::Conv2d {
                x,
                w,
                bias,
                cout,
                cin,
                k,
                pad,
            },
            value,
        ))
    }

    /// Add a `(c,1,1)` bias to every spatial position of a `(c,h,w)` tensor.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.value(x).shape();
        if self.value(b).shape() != (c, 1, 1) {
            return Err(Error::dim("bias_add needs bias of shape (c,1,1)"));
        }
        let mut out = self.value(x).clone();
        for ch in 0..c {
            let bv = self.value(b).data()[ch];
            for v in out.channel_mut(ch) {
                *v += bv;
            }
        }
        let _ = (h, w);
        Ok(self.push(Op::BiasAdd { x, b }, out))
    }

    pub fn pointwise(&mut self, x: NodeId, kind: Pointwise) -> NodeId {
        let value = self.value(x).map(|v| pointwise_eval(kind, v));
        self.push(Op::Pointwise { x, kind }, value)
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Elu)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Recip)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.pointwise(x, Pointwise::Square)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        let value = RealTensor::from_vec((1, 1, 1), vec![m]).expect("scalar");
        self.push(Op::Mean { x }, value)
    }

    /// `sum(x * mask)` reduced to a scalar; the mask is typically a constant.
    pub fn masked_sum(&mut self, x: NodeId, mask: NodeId) -> Result<NodeId> {
        self.value(x).check_same_shape(self.value(mask))?;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(mask).data())
            .map(|(&a, &m)| a * m)
            .sum();
        let value = RealTensor::from_vec((1, 1, 1), vec![s])?;
        Ok(self.push(Op::MaskedSum { x, mask }, value))
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).check_same_shape(self.value(b))?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let value = RealTensor::from_vec((1, 1, 1), vec![s / n])?;
        Ok(self.push(Op::Mse { a, b }, value))
    }

    /// Differentiable SSIM over 8x8 stride-1 windows, composed from the
    /// primitive ops (box filtering is a constant-diagonal convolution).
    /// Matches [`crate::metrics::ssim`] up to roundoff.
    pub fn ssim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.value(a).check_same_shape(self.value(b))?;
        let (c, h, w) = self.value(a).shape();
        let k = SSIM_WINDOW;
        if h < k || w < k {
            return Err(Error::dim(format!(
                "ssim needs planes of at least {k}x{k}, got {h}x{w}"
            )));
        }
        // Per-channel box filter: (c*c, k, k) kernel, 1/(k*k) on the diagonal.
        let inv_n = 1.0 / (k * k) as f64;
        let mut box_w = vec![0.0; c * c * k * k];
        for ch in 0..c {
            let base = (ch * c + ch) * k * k;
            box_w[base..base + k * k].fill(inv_n);
        }
        let box_w = self.leaf(RealTensor::from_vec((c * c, k, k), box_w)?);

        let mu_a = self.conv2d(a, box_w, None, c, k, 0)?;
        let mu_b = self.conv2d(b, box_w, None, c, k, 0)?;
        let aa = self.square(a);
        let bb = self.square(b);
        let ab = self.mul(a, b)?;
        let e_aa = self.conv2d(aa, box_w, None, c, k, 0)?;
        let e_bb = self.conv2d(bb, box_w, None, c, k, 0)?;
        let e_ab = self.conv2d(ab, box_w, None, c, k, 0)?;

        let mu_a2 = self.square(mu_a);
        let mu_b2 = self.square(mu_b);
        let mu_ab = self.mul(mu_a, mu_b)?;
        let var_a = self.sub(e_aa, mu_a2)?;
        let var_b = self.sub(e_bb, mu_b2)?;
        let cov = self.sub(e_ab, mu_ab)?;

        let lum_num = self.affine(mu_ab, 2.0, SSIM_C1);
        let str_num = self.affine(cov, 2.0, SSIM_C2);
        let num = self.mul(lum_num, str_num)?;
        let mu_sum = self.add(mu_a2, mu_b2)?;
        let lum_den = self.affine(mu_sum, 1.0, SSIM_C1);
        let var_sum = self.add(var_a, var_b)?;
        let str_den = self.affine(var_sum, 1.0, SSIM_C2);
        let den = self.mul(lum_den, str_den)?;
        let inv_den = self.recip(den);
        let map = self.mul(num, inv_den)?;
        Ok(self.mean(map))
    }

    /// Extract channel `index` of a `(c,h,w)` node as `(1,h,w)` via a
    /// constant selector convolution.
    pub fn select_channel(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let (c, _, _) = self.value(x).shape();
        if index >= c {
            return Err(Error::dim(format!("channel {index} out of {c}")));
        }
        let mut sel = vec![0.0; c];
        sel[index] = 1.0;
        let w = self.leaf(RealTensor::from_vec((c, 1, 1), sel)?);
        self.conv2d(x, w, None, 1, 1, 0)
    }

    /// Place a `(1,h,w)` node into channel `index` of an otherwise-zero
    /// `(c,h,w)` tensor via a constant scatter convolution.
    pub fn scatter_channel(&mut self, x: NodeId, channels: usize, index: usize) -> Result<NodeId> {
        if self.value(x).channels() != 1 {
            return Err(Error::dim("scatter_channel expects a single-channel node"));
        }
        if index >= channels {
            return Err(Error::dim(format!("channel {index} out of {channels}")));
        }
        let mut sel = vec![0.0; channels];
        sel[index] = 1.0;
        let w = self.leaf(RealTensor::from_vec((channels, 1, 1), sel)?);
        self.conv2d(x, w, None, channels, 1, 0)
    }

    /// Reverse sweep from a scalar output. Returns adjoints for every node
    /// reached; trainable leaves off the path read back as zeros through
    /// [`Gradients::leaf_grad`].
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<RealTensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(RealTensor::from_vec((1, 1, 1), vec![1.0])?);

        for idx in (0..=output.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Lin { a, b, alpha, beta } => {
                    accumulate(&mut grads, *a, &g.scale(*alpha), self);
                    accumulate(&mut grads, *b, &g.scale(*beta), self);
                }
                Op::Affine { x, mul } => {
                    accumulate(&mut grads, *x, &g.scale(*mul), self);
                }
                Op::Mul { a, b } => {
                    let ga = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                    let gb = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                    accumulate(&mut grads, *a, &ga, self);
                    accumulate(&mut grads, *b, &gb, self);
                }
                Op::MatMul { a, b } => {
                    let (_, m, k) = self.value(*a).shape();
                    let (_, _, n) = self.value(*b).shape();
                    // gA = g . B^T ; gB = A^T . g
                    let mut ga = vec![0.0; m * k];
                    matmul_nt(g.data(), self.value(*b).data(), m, n, k, &mut ga);
                    let mut gb = vec![0.0; k * n];
                    matmul_tn(self.value(*a).data(), g.data(), m, k, n, &mut gb);
                    accumulate(&mut grads, *a, &RealTensor::from_vec((1, m, k), ga)?, self);
                    accumulate(&mut grads, *b, &RealTensor::from_vec((1, k, n), gb)?, self);
                }
                Op::Conv2d {
                    x,
                    w,
                    bias,
                    cout,
                    cin,
                    k,
                    pad,
                } => {
                    let (_, h, width) = self.value(*x).shape();
                    let (_, ho, wo) = self.nodes[idx].value.shape();
                    let mut gx = vec![0.0; cin * h * width];
                    conv::conv2d_grad_input(
                        g.data(),
                        *cout,
                        ho,
                        wo,
                        self.value(*w).data(),
                        *cin,
                        *k,
                        *pad,
                        &mut gx,
                        h,
                        width,
                    );
                    let mut gw = vec![0.0; cout * cin * k * k];
                    conv::conv2d_grad_weight(
                        self.value(*x).data(),
                        *cin,
                        h,
                        width,
                        g.data(),
                        *cout,
                        ho,
                        wo,
                        *k,
                        *pad,
                        &mut gw,
                    );
                    accumulate(
                        &mut grads,
                        *x,
                        &RealTensor::from_vec((*cin, h, width), gx)?,
                        self,
                    );
                    accumulate(
                        &mut grads,
                        *w,
                        &RealTensor::from_vec((cout * cin, *k, *k), gw)?,
                        self,
                    );
                    if let Some(b) = bias {
                        let mut gb = vec![0.0; *cout];
                        conv::conv2d_grad_bias(g.data(), *cout, ho, wo, &mut gb);
                        accumulate(&mut grads, *b, &RealTensor::from_vec((*cout, 1, 1), gb)?, self);
                    }
                }
                Op::BiasAdd { x, b } => {
                    let (c, _, _) = self.value(*x).shape();
                    let mut gb = vec![0.0; c];
                    for ch in 0..c {
                        gb[ch] = g.channel(ch).iter().sum();
                    }
                    accumulate(&mut grads, *x, &g, self);
                    accumulate(&mut grads, *b, &RealTensor::from_vec((c, 1, 1), gb)?, self);
                }
                Op::Pointwise { x, kind } => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| gv * pointwise_deriv(*kind, xv))?;
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::Mean { x } => {
                    let n = self.value(*x).len() as f64;
                    let gv = g.data()[0] / n;
                    let gx = RealTensor::filled(self.value(*x).shape(), gv);
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::MaskedSum { x, mask } => {
                    let gv = g.data()[0];
                    let gx = self.value(*mask).scale(gv);
                    accumulate(&mut grads, *x, &gx, self);
                }
                Op::Mse { a, b } => {
                    let n = self.value(*a).len() as f64;
                    let gv = g.data()[0] * 2.0 / n;
                    let diff = self.value(*a).sub(self.value(*b))?;
                    accumulate(&mut grads, *a, &diff.scale(gv), self);
                    accumulate(&mut grads, *b, &diff.scale(-gv), self);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<RealTensor>], id: NodeId, g: &RealTensor, tape: &Tape) {
    debug_assert_eq!(tape.value(id).shape(), g.shape());
    match &mut grads[id.0] {
        Some(existing) => {
            let summed = existing.add(g).expect("gradient shape mismatch");
            *existing = summed;
        }
        slot @ None => *slot = Some(g.clone()),
    }
}

fn pointwise_eval(kind: Pointwise, v: f64) -> f64 {
    match kind {
        Pointwise::Elu => {
            if v > 0.0 {
                v
            } else {
                v.exp() - 1.0
            }
        }
        Pointwise::Recip => 1.0 / v,
        Pointwise::Square => v * v,
    }
}

fn pointwise_deriv(kind: Pointwise, v: f64) -> f64 {
    match kind {
        Pointwise::Elu => {
            if v > 0.0 {
                1.0
            } else {
                v.exp()
            }
        }
        Pointwise::Recip => -1.0 / (v * v),
        Pointwise::Square => 2.0 * v,
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out(m,k) += g(m,n) . b(k,n)^T`
fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        for kk in 0..k {
            let dot: f64 = g[i * n..(i + 1) * n]
                .iter()
                .zip(&b[kk * n..(kk + 1) * n])
                .map(|(&x, &y)| x * y)
                .sum();
            out[i * k + kk] += dot;
        }
    }
}

/// `out(k,n) += a(m,k)^T . g(m,n)`
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let grow = &g[i * n..(i + 1) * n];
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// A complex value on the tape: paired real/imaginary nodes.
#[derive(Debug, Clone, Copy)]
pub struct ComplexNode {
    pub re: NodeId,
    pub im: NodeId,
}

impl Tape {
    /// Join real and imaginary nodes into a complex pair.
    pub fn complex_join(&mut self, re: NodeId, im: NodeId) -> Result<ComplexNode> {
        self.value(re).check_same_shape(self.value(im))?;
        Ok(ComplexNode { re, im })
    }

    /// Split a complex pair back into parts (structural; the inverse of join).
    pub fn complex_split(&self, z: ComplexNode) -> (NodeId, NodeId) {
        (z.re, z.im)
    }

    pub fn complex_leaf(&mut self, t: &ComplexTensor) -> ComplexNode {
        let re = self.leaf(t.real());
        let im = self.leaf(t.imag());
        ComplexNode { re, im }
    }

    /// Complex matrix product via four real products.
    pub fn complex_matmul(&mut self, a: ComplexNode, b: ComplexNode) -> Result<ComplexNode> {
        let rr = self.matmul(a.re, b.re)?;
        let ii = self.matmul(a.im, b.im)?;
        let ri = self.matmul(a.re, b.im)?;
        let ir = self.matmul(a.im, b.re)?;
        let re = self.lin(rr, ii, 1.0, -1.0)?;
        let im = self.lin(ri, ir, 1.0, 1.0)?;
        Ok(ComplexNode { re, im })
    }

    /// Centered orthonormal 2-D transform of a `(1,h,w)` complex node,
    /// expressed as two complex matrix products with constant DFT matrices.
    /// Numerically identical (to roundoff) to [`crate::fft::fft2_centered`].
    pub fn fft2_centered_node(&mut self, x: ComplexNode, inverse: bool) -> Result<ComplexNode> {
        let (c, h, w) = self.value(x.re).shape();
        if c != 1 {
            return Err(Error::dim("tape transform operates on single planes"));
        }
        let (chr, chi) = dft_matrix_centered(h, inverse)?;
        let ch = ComplexNode {
            re: self.leaf(RealTensor::from_vec((1, h, h), chr)?),
            im: self.leaf(RealTensor::from_vec((1, h, h), chi)?),
        };
        let t1 = self.complex_matmul(ch, x)?;
        let cw = if w == h {
            ch
        } else {
            let (cwr, cwi) = dft_matrix_centered(w, inverse)?;
            ComplexNode {
                re: self.leaf(RealTensor::from_vec((1, w, w), cwr)?),
                im: self.leaf(RealTensor::from_vec((1, w, w), cwi)?),
            }
        };
        self.complex_matmul(t1, cw)
    }
}
