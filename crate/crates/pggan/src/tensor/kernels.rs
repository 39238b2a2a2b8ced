//! Array kernels behind the tape ops. Convolutions go through im2col plus
//! GEMM; batch items are independent, so they run in parallel with a fixed
//! accumulation order per output element (bit-deterministic for any thread
//! count).

use crate::scalar::Scalar;
use rayon::prelude::*;

/// Output extent of a convolution along one axis, if non-empty.
pub fn conv_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    let effective = dilation * (kernel - 1) + 1;
    if padded < effective {
        return None;
    }
    Some((padded - effective) / stride + 1)
}

/// Output extent of a transposed convolution along one axis, if positive.
pub fn tconv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let expanded = (input - 1) * stride + kernel;
    if expanded <= 2 * padding {
        return None;
    }
    Some(expanded - 2 * padding)
}

/// Resolved sizes for one convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn out_spatial(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unroll one batch item into a `[cin*kh*kw, oh*ow]` column matrix.
fn im2col<S: Scalar>(input: &[S], g: &ConvGeometry, col: &mut [S]) {
    let ohw = g.out_spatial();
    debug_assert_eq!(col.len(), g.col_rows() * ohw);
    debug_assert_eq!(input.len(), g.cin * g.h * g.w);
    let mut row = 0usize;
    for ci in 0..g.cin {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oi in 0..g.oh {
                    let ih = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    let dst_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ih < 0 || ih >= g.h as isize {
                        dst_row.fill(S::zero());
                        continue;
                    }
                    let src_row = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (oj, d) in dst_row.iter_mut().enumerate() {
                        let iw = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        *d = if iw < 0 || iw >= g.w as isize {
                            S::zero()
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a column matrix back onto one input image (adjoint of im2col).
fn col2im<S: Scalar>(col: &[S], g: &ConvGeometry, out: &mut [S]) {
    let ohw = g.out_spatial();
    debug_assert_eq!(out.len(), g.cin * g.h * g.w);
    let mut row = 0usize;
    for ci in 0..g.cin {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * ohw..(row + 1) * ohw];
                for oi in 0..g.oh {
                    let ih = (oi * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let src_row = &src[oi * g.ow..(oi + 1) * g.ow];
                    for (oj, &s) in src_row.iter().enumerate() {
                        let iw = (oj * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst_row[iw as usize] = dst_row[iw as usize] + s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Batched cross-correlation: `weight [cout, cin, kh, kw]` applied to
/// `input [n, cin, h, w]`, optional per-channel bias.
pub fn conv_forward<S: Scalar>(input: &[S], weight: &[S], bias: Option<&[S]>, g: &ConvGeometry) -> Vec<S> {
    let ckk = g.col_rows();
    let ohw = g.out_spatial();
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * ohw;
    let mut out = vec![S::zero(); g.n * out_item];
    out.par_chunks_mut(out_item)
        .enumerate()
        .for_each(|(item, chunk)| {
            let mut col = vec![S::zero(); ckk * ohw];
            im2col(&input[item * in_item..(item + 1) * in_item], g, &mut col);
            S::gemm_strided(
                g.cout,
                ckk,
                ohw,
                S::one(),
                weight,
                ckk as isize,
                1,
                &col,
                ohw as isize,
                1,
                S::zero(),
                chunk,
            );
            if let Some(b) = bias {
                for co in 0..g.cout {
                    let bv = b[co];
                    for v in &mut chunk[co * ohw..(co + 1) * ohw] {
                        *v = *v + bv;
                    }
                }
            }
        });
    out
}

/// Gradient of a convolution with respect to its input; also the forward
/// pass of the transposed convolution (they are the same linear map).
pub fn conv_input_grad<S: Scalar>(out_grad: &[S], weight: &[S], g: &ConvGeometry) -> Vec<S> {
    let ckk = g.col_rows();
    let ohw = g.out_spatial();
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * ohw;
    let mut gin = vec![S::zero(); g.n * in_item];
    gin.par_chunks_mut(in_item)
        .enumerate()
        .for_each(|(item, chunk)| {
            let mut colg = vec![S::zero(); ckk * ohw];
            // colg = W^T (ckk x cout) * gout (cout x ohw)
            S::gemm_strided(
                ckk,
                g.cout,
                ohw,
                S::one(),
                weight,
                1,
                ckk as isize,
                &out_grad[item * out_item..(item + 1) * out_item],
                ohw as isize,
                1,
                S::zero(),
                &mut colg,
            );
            col2im(&colg, g, chunk);
        });
    gin
}

/// Gradient of a convolution with respect to its weight, summed over the batch.
pub fn conv_weight_grad<S: Scalar>(out_grad: &[S], input: &[S], g: &ConvGeometry) -> Vec<S> {
    let ckk = g.col_rows();
    let ohw = g.out_spatial();
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * ohw;
    let partials: Vec<Vec<S>> = (0..g.n)
        .into_par_iter()
        .map(|item| {
            let mut col = vec![S::zero(); ckk * ohw];
            im2col(&input[item * in_item..(item + 1) * in_item], g, &mut col);
            let mut gw = vec![S::zero(); g.cout * ckk];
            // gw = gout (cout x ohw) * col^T (ohw x ckk)
            S::gemm_strided(
                g.cout,
                ohw,
                ckk,
                S::one(),
                &out_grad[item * out_item..(item + 1) * out_item],
                ohw as isize,
                1,
                &col,
                1,
                ohw as isize,
                S::zero(),
                &mut gw,
            );
            gw
        })
        .collect();
    let mut total = vec![S::zero(); g.cout * ckk];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    total
}

/// Per-output-channel bias gradient: sum over batch and spatial positions.
pub fn bias_grad<S: Scalar>(out_grad: &[S], n: usize, cout: usize, ohw: usize) -> Vec<S> {
    let mut gb = vec![S::zero(); cout];
    for item in 0..n {
        for co in 0..cout {
            let base = (item * cout + co) * ohw;
            let mut acc = S::zero();
            for &v in &out_grad[base..base + ohw] {
                acc = acc + v;
            }
            gb[co] = gb[co] + acc;
        }
    }
    gb
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn resize_nearest_forward<S: Scalar>(input: &[S], n: usize, c: usize, h: usize, w: usize, scale: usize) -> Vec<S> {
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![S::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oi in 0..oh {
            let src_row = &src[(oi / scale) * w..(oi / scale + 1) * w];
            let dst_row = &mut dst[oi * ow..(oi + 1) * ow];
            for (oj, d) in dst_row.iter_mut().enumerate() {
                *d = src_row[oj / scale];
            }
        }
    }
    out
}

pub fn resize_nearest_backward<S: Scalar>(out_grad: &[S], n: usize, c: usize, h: usize, w: usize, scale: usize) -> Vec<S> {
    let (oh, ow) = (h * scale, w * scale);
    let mut gin = vec![S::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &out_grad[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gin[plane * h * w..(plane + 1) * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let d = &mut dst[(oi / scale) * w + oj / scale];
                *d = *d + src[oi * ow + oj];
            }
        }
    }
    gin
}

/// Source coordinate and blend weights for bilinear sampling with
/// align-corners disabled: `src = (dst + 0.5) / scale - 0.5`, clamped.
fn bilinear_taps(o: usize, scale: usize, extent: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) / scale as f64 - 0.5;
    let src = src.max(0.0);
    let i0 = (src.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    let frac = (src - i0 as f64).clamp(0.0, 1.0);
    (i0, i1, frac)
}

pub fn resize_bilinear_forward<S: Scalar>(input: &[S], n: usize, c: usize, h: usize, w: usize, scale: usize) -> Vec<S> {
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![S::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oi in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oi, scale, h);
            for oj in 0..ow {
                let (x0, x1, fx) = bilinear_taps(oj, scale, w);
                let v00 = src[y0 * w + x0].as_f64();
                let v01 = src[y0 * w + x1].as_f64();
                let v10 = src[y1 * w + x0].as_f64();
                let v11 = src[y1 * w + x1].as_f64();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                dst[oi * ow + oj] = S::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<S: Scalar>(out_grad: &[S], n: usize, c: usize, h: usize, w: usize, scale: usize) -> Vec<S> {
    let (oh, ow) = (h * scale, w * scale);
    let mut gin = vec![S::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &out_grad[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gin[plane * h * w..(plane + 1) * h * w];
        for oi in 0..oh {
            let (y0, y1, fy) = bilinear_taps(oi, scale, h);
            for oj in 0..ow {
                let (x0, x1, fx) = bilinear_taps(oj, scale, w);
                let gv = src[oi * ow + oj].as_f64();
                let mut add = |y: usize, x: usize, wgt: f64| {
                    let d = &mut dst[y * w + x];
                    *d = *d + S::from_f64(gv * wgt);
                };
                add(y0, x0, (1.0 - fy) * (1.0 - fx));
                add(y0, x1, (1.0 - fy) * fx);
                add(y1, x0, fy * (1.0 - fx));
                add(y1, x1, fy * fx);
            }
        }
    }
    gin
}

/// Affine map on flattened rows: `y[n, j] = sum_f x[n, f] w[j, f] + b[j]`.
pub fn dense_forward<S: Scalar>(input: &[S], weight: &[S], bias: &[S], n: usize, f: usize, fout: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * fout];
    // X (n x f) * W^T (f x fout)
    S::gemm_strided(
        n,
        f,
        fout,
        S::one(),
        input,
        f as isize,
        1,
        weight,
        1,
        f as isize,
        S::zero(),
        &mut out,
    );
    for row in 0..n {
        for j in 0..fout {
            out[row * fout + j] = out[row * fout + j] + bias[j];
        }
    }
    out
}

pub fn dense_input_grad<S: Scalar>(out_grad: &[S], weight: &[S], n: usize, f: usize, fout: usize) -> Vec<S> {
    let mut gin = vec![S::zero(); n * f];
    // gY (n x fout) * W (fout x f)
    S::gemm_strided(
        n,
        fout,
        f,
        S::one(),
        out_grad,
        fout as isize,
        1,
        weight,
        f as isize,
        1,
        S::zero(),
        &mut gin,
    );
    gin
}

pub fn dense_weight_grad<S: Scalar>(out_grad: &[S], input: &[S], n: usize, f: usize, fout: usize) -> Vec<S> {
    let mut gw = vec![S::zero(); fout * f];
    // gY^T (fout x n) * X (n x f)
    S::gemm_strided(
        fout,
        n,
        f,
        S::one(),
        out_grad,
        1,
        fout as isize,
        input,
        f as isize,
        1,
        S::zero(),
        &mut gw,
    );
    gw
}

pub fn dense_bias_grad<S: Scalar>(out_grad: &[S], n: usize, fout: usize) -> Vec<S> {
    let mut gb = vec![S::zero(); fout];
    for row in 0..n {
        for j in 0..fout {
            gb[j] = gb[j] + out_grad[row * fout + j];
        }
    }
    gb
}

fn channel_stats<S: Scalar>(x: &[S], eps: f64) -> (f64, f64) {
    let m = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / m;
    let var = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / m;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Per-sample, per-channel normalization with learnable gain and shift.
pub fn instance_norm_forward<S: Scalar>(
    input: &[S],
    gain: &[S],
    shift: &[S],
    n: usize,
    c: usize,
    hw: usize,
    eps: f64,
) -> Vec<S> {
    let mut out = vec![S::zero(); input.len()];
    for item in 0..n {
        for ch in 0..c {
            let base = (item * c + ch) * hw;
            let x = &input[base..base + hw];
            let (mean, inv) = channel_stats(x, eps);
            let (g, b) = (gain[ch].as_f64(), shift[ch].as_f64());
            for (o, v) in out[base..base + hw].iter_mut().zip(x) {
                *o = S::from_f64(g * (v.as_f64() - mean) * inv + b);
            }
        }
    }
    out
}

/// Returns (input grad, gain grad, shift grad).
pub fn instance_norm_backward<S: Scalar>(
    out_grad: &[S],
    input: &[S],
    gain: &[S],
    n: usize,
    c: usize,
    hw: usize,
    eps: f64,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut gin = vec![S::zero(); input.len()];
    let mut ggain = vec![0.0f64; c];
    let mut gshift = vec![0.0f64; c];
    let m = hw as f64;
    for item in 0..n {
        for ch in 0..c {
            let base = (item * c + ch) * hw;
            let x = &input[base..base + hw];
            let g = &out_grad[base..base + hw];
            let (mean, inv) = channel_stats(x, eps);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for (gv, xv) in g.iter().zip(x) {
                let xn = (xv.as_f64() - mean) * inv;
                sum_g += gv.as_f64();
                sum_gx += gv.as_f64() * xn;
            }
            ggain[ch] += sum_gx;
            gshift[ch] += sum_g;
            let gamma = gain[ch].as_f64();
            for i in 0..hw {
                let xn = (x[i].as_f64() - mean) * inv;
                let gi = gamma * inv * (g[i].as_f64() - sum_g / m - xn * sum_gx / m);
                gin[base + i] = S::from_f64(gi);
            }
        }
    }
    let ggain = ggain.into_iter().map(S::from_f64).collect();
    let gshift = gshift.into_iter().map(S::from_f64).collect();
    (gin, ggain, gshift)
}
