//! Numeric forward and backward kernels shared by the tape and by
//! tape-free inference paths. Shapes are validated by the public wrappers in
//! [`crate::ops`]; these functions assume consistent extents.

use matrixmultiply::sgemm;

/// Geometry of a single-image 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Row-major `c[m×n] = alpha·a·b + beta·c` with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every strided access of an
    // m×k / k×n / m×n operand; `c` is exclusively borrowed.
    unsafe {
        sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(geo: &ConvGeometry, input: &[f32]) -> Vec<f32> {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let n = oh * ow;
    let mut cols = vec![0.0f32; geo.patch_len() * n];
    let pad = geo.padding as isize;
    for ci in 0..geo.in_channels {
        let plane = &input[ci * geo.height * geo.width..(ci + 1) * geo.height * geo.width];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let row = (ci * geo.kernel_h + ky) * geo.kernel_w + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        if ix >= 0 && ix < geo.width as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(geo: &ConvGeometry, cols: &[f32], grad_input: &mut [f32]) {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let n = oh * ow;
    let pad = geo.padding as isize;
    for ci in 0..geo.in_channels {
        let plane =
            &mut grad_input[ci * geo.height * geo.width..(ci + 1) * geo.height * geo.width];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let row = (ci * geo.kernel_h + ky) * geo.kernel_w + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    let dst_row =
                        &mut plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        if ix >= 0 && ix < geo.width as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    geo: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let n = geo.out_h() * geo.out_w();
    let mut out = vec![0.0f32; geo.out_channels * n];
    for (co, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    let owned;
    let cols: &[f32] = if geo.is_pointwise() {
        input
    } else {
        owned = im2col(geo, input);
        &owned
    };
    let k = geo.patch_len();
    gemm(geo.out_channels, k, n, 1.0, kernel, (k, 1), cols, (n, 1), 1.0, &mut out);
    out
}

pub(crate) struct ConvGrads {
    pub input: Vec<f32>,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

pub(crate) fn conv2d_backward(
    geo: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
) -> ConvGrads {
    let n = geo.out_h() * geo.out_w();
    let k = geo.patch_len();
    let bias: Vec<f32> = grad_out.chunks_exact(n).map(|row| row.iter().sum()).collect();

    let owned;
    let cols: &[f32] = if geo.is_pointwise() {
        input
    } else {
        owned = im2col(geo, input);
        &owned
    };

    // dK[co, k] = Σ_n dOut[co, n] · cols[k, n]
    let mut grad_kernel = vec![0.0f32; geo.out_channels * k];
    gemm(geo.out_channels, n, k, 1.0, grad_out, (n, 1), cols, (1, n), 0.0, &mut grad_kernel);

    // dCols[k, n] = Σ_co K[co, k] · dOut[co, n]
    let mut grad_cols = vec![0.0f32; k * n];
    gemm(k, geo.out_channels, n, 1.0, kernel, (1, k), grad_out, (n, 1), 0.0, &mut grad_cols);

    let grad_input = if geo.is_pointwise() {
        grad_cols
    } else {
        let mut gi = vec![0.0f32; geo.in_channels * geo.height * geo.width];
        col2im(geo, &grad_cols, &mut gi);
        gi
    };

    ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias,
    }
}

/// 2×2 non-overlapping max pooling. Returns the pooled values and, per output
/// cell, the flat input index that won (first in row-major order on ties).
pub(crate) fn maxpool2_forward(
    channels: usize,
    height: usize,
    width: usize,
    input: &[f32],
) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut argmax = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * width + 2 * ox;
                let candidates = [top, top + 1, top + width, top + width + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn global_avg_pool(channels: usize, plane: usize, input: &[f32]) -> Vec<f32> {
    (0..channels)
        .map(|c| input[c * plane..(c + 1) * plane].iter().sum::<f32>() / plane as f32)
        .collect()
}

/// `W·x + b` for a row-major `[out, in]` weight.
pub(crate) fn linear_forward(input: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let fan_in = input.len();
    weight
        .chunks_exact(fan_in)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f32>())
        .collect()
}

pub(crate) fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) const PROB_FLOOR: f32 = 1e-12;

/// Align-corners-false bilinear resize of each `[h, w]` plane to `[out_h, out_w]`.
pub(crate) fn upsample_bilinear(
    channels: usize,
    (h, w): (usize, usize),
    (out_h, out_w): (usize, usize),
    input: &[f32],
) -> Vec<f32> {
    let ys: Vec<(usize, usize, f32)> = (0..out_h).map(|y| source_coord(y, h, out_h)).collect();
    let xs: Vec<(usize, usize, f32)> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy));
            }
        }
    }
    out
}

/// Interpolates between `a` and `b`, exact when `a == b` and never leaving
/// the closed interval spanned by the endpoints.
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f32 / out_len as f32;
    let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = if i1 == i0 { 0.0 } else { src - i0 as f32 };
    (i0, i1, frac)
}
