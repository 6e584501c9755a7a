//! Raw 2-D convolution kernels shared by the tape, the flow networks, and
//! spectral-norm power iteration.
//!
//! Layouts: inputs `(cin, h, w)` row-major, weights `(cout, cin, k, k)`
//! flattened in that order, outputs `(cout, ho, wo)` with
//! `ho = h + 2*pad - k + 1`. Stride is always 1 and padding is zero-fill.
//! The gradient-vs-input kernel is also the exact adjoint (transpose) of the
//! forward operator, which is what power iteration needs.

/// Output spatial size for one axis.
#[inline]
pub fn conv_out(n: usize, k: usize, pad: usize) -> usize {
    n + 2 * pad - k + 1
}

pub fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    wts: &[f64],
    cout: usize,
    k: usize,
    pad: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let ho = conv_out(h, k, pad);
    let wo = conv_out(w, k, pad);
    debug_assert_eq!(x.len(), cin * h * w);
    debug_assert_eq!(wts.len(), cout * cin * k * k);
    debug_assert_eq!(out.len(), cout * ho * wo);

    for o in 0..cout {
        let b = bias.map_or(0.0, |b| b[o]);
        out[o * ho * wo..(o + 1) * ho * wo].fill(b);
    }
    for o in 0..cout {
        let out_plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..cin {
            let x_plane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..ho {
                        let iy = y + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(wo);
                        if x0 >= x1 {
                            continue;
                        }
                        let srow = iy * w + x0 + kx - pad;
                        let drow = y * wo + x0;
                        let len = x1 - x0;
                        for (d, s) in out_plane[drow..drow + len]
                            .iter_mut()
                            .zip(&x_plane[srow..srow + len])
                        {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the input (equivalently, the transpose operator applied
/// to `gy`). Accumulates into `gx`, which the caller must zero first.
pub fn conv2d_grad_input(
    gy: &[f64],
    cout: usize,
    ho: usize,
    wo: usize,
    wts: &[f64],
    cin: usize,
    k: usize,
    pad: usize,
    gx: &mut [f64],
    h: usize,
    w: usize,
) {
    debug_assert_eq!(gy.len(), cout * ho * wo);
    debug_assert_eq!(gx.len(), cin * h * w);
    for o in 0..cout {
        let gy_plane = &gy[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..cin {
            let gx_plane = &mut gx[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[((o * cin + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..ho {
                        let iy = y + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(wo);
                        if x0 >= x1 {
                            continue;
                        }
                        let drow = iy * w + x0 + kx - pad;
                        let srow = y * wo + x0;
                        let len = x1 - x0;
                        for (d, s) in gx_plane[drow..drow + len]
                            .iter_mut()
                            .zip(&gy_plane[srow..srow + len])
                        {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the weights. Accumulates into `gw` (caller zeroes).
pub fn conv2d_grad_weight(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    gy: &[f64],
    cout: usize,
    ho: usize,
    wo: usize,
    k: usize,
    pad: usize,
    gw: &mut [f64],
) {
    debug_assert_eq!(gw.len(), cout * cin * k * k);
    for o in 0..cout {
        let gy_plane = &gy[o * ho * wo..(o + 1) * ho * wo];
        for i in 0..cin {
            let x_plane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for y in 0..ho {
                        let iy = y + ky;
                        if iy < pad || iy >= h + pad {
                            continue;
                        }
                        let iy = iy - pad;
                        let x0 = pad.saturating_sub(kx);
                        let x1 = (w + pad - kx).min(wo);
                        if x0 >= x1 {
                            continue;
                        }
                        let xrow = iy * w + x0 + kx - pad;
                        let grow = y * wo + x0;
                        let len = x1 - x0;
                        acc += gy_plane[grow..grow + len]
                            .iter()
                            .zip(&x_plane[xrow..xrow + len])
                            .map(|(&g, &v)| g * v)
                            .sum::<f64>();
                    }
                    gw[((o * cin + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

/// Per-output-channel bias gradient.
pub fn conv2d_grad_bias(gy: &[f64], cout: usize, ho: usize, wo: usize, gb: &mut [f64]) {
    for o in 0..cout {
        gb[o] += gy[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
    }
}
