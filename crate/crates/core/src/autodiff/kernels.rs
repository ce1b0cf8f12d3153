//! Raw forward and adjoint loops over flat row-major buffers.

/// Zero padding applied around the spatial extents of a convolution input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(rows: usize, cols: usize) -> Self {
        Padding {
            top: rows,
            bottom: rows,
            left: cols,
            right: cols,
        }
    }

    /// Padding that keeps the spatial extents unchanged for a `kh x kw` kernel.
    /// Even kernels put the extra row/column at the bottom/right.
    pub fn same(kh: usize, kw: usize) -> Self {
        let top = (kh - 1) / 2;
        let left = (kw - 1) / 2;
        Padding {
            top,
            bottom: kh - 1 - top,
            left,
            right: kw - 1 - left,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: Padding,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.h + self.pad.top + self.pad.bottom + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + self.pad.left + self.pad.right + 1 - self.kw
    }

    /// Output index range `[lo, hi)` along one axis for which the input
    /// coordinate `out + k - pad` lands inside `[0, extent)`.
    fn valid(k: usize, pad: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(k);
        let hi = (extent + pad).saturating_sub(k).min(out_extent);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward(d: &ConvDims, input: &[f64], kernels: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let plane = oh * ow;
    let mut out = vec![0.0; d.c_out * plane];
    for o in 0..d.c_out {
        let out_plane = &mut out[o * plane..(o + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..d.c_in {
            let in_plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (y0, y1) = ConvDims::valid(ky, d.pad.top, d.h, oh);
                for kx in 0..d.kw {
                    let wgt = kernels[((o * d.c_in + c) * d.kh + ky) * d.kw + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let (x0, x1) = ConvDims::valid(kx, d.pad.left, d.w, ow);
                    for y in y0..y1 {
                        let iy = y + ky - d.pad.top;
                        let src = &in_plane[iy * d.w + x0 + kx - d.pad.left..][..x1 - x0];
                        let dst = &mut out_plane[y * ow + x0..y * ow + x1];
                        for (acc, &v) in dst.iter_mut().zip(src) {
                            *acc += wgt * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates the convolution adjoints. Any of the three outputs may be
/// skipped by passing `None`.
pub(crate) fn conv2d_backward(
    d: &ConvDims,
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    mut grad_k: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let (oh, ow) = (d.out_h(), d.out_w());
    let plane = oh * ow;
    if let Some(gb) = grad_b {
        for o in 0..d.c_out {
            gb[o] += grad_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    for o in 0..d.c_out {
        let g_plane = &grad_out[o * plane..(o + 1) * plane];
        for c in 0..d.c_in {
            let in_off = c * d.h * d.w;
            for ky in 0..d.kh {
                let (y0, y1) = ConvDims::valid(ky, d.pad.top, d.h, oh);
                for kx in 0..d.kw {
                    let k_idx = ((o * d.c_in + c) * d.kh + ky) * d.kw + kx;
                    let (x0, x1) = ConvDims::valid(kx, d.pad.left, d.w, ow);
                    let wgt = kernels[k_idx];
                    let mut k_acc = 0.0;
                    for y in y0..y1 {
                        let iy = y + ky - d.pad.top;
                        let start = in_off + iy * d.w + x0 + kx - d.pad.left;
                        let g_row = &g_plane[y * ow + x0..y * ow + x1];
                        if grad_k.is_some() {
                            let src = &input[start..start + (x1 - x0)];
                            k_acc += g_row.iter().zip(src).map(|(g, v)| g * v).sum::<f64>();
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let dst = &mut gi[start..start + (x1 - x0)];
                            for (acc, &g) in dst.iter_mut().zip(g_row) {
                                *acc += wgt * g;
                            }
                        }
                    }
                    if let Some(gk) = grad_k.as_deref_mut() {
                        gk[k_idx] += k_acc;
                    }
                }
            }
        }
    }
}

/// 2x2 non-overlapping max pooling with ceil semantics. Returns the pooled
/// values and, per output cell, the flat input offset of the winning cell
/// (first maximum in row-major scan order).
pub(crate) fn maxpool2_forward(c: usize, h: usize, w: usize, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for iy in 2 * y..(2 * y + 2).min(h) {
                    for ix in 2 * x..(2 * x + 2).min(w) {
                        let idx = base + iy * w + ix;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn dense_forward(m: usize, n: usize, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| {
            let row = &weights[i * n..(i + 1) * n];
            bias[i] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}
