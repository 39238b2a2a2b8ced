//! Shared test oracles. Everything here is written as directly as possible
//! (nested loops, textbook formulas) and stays independent of the library's
//! im2col/GEMM code paths it is used to check.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Direct cross-correlation: 7 nested loops, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
    let ow = (w + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for co in 0..cout {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bias.map(|bv| bv[co]).unwrap_or(0.0);
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oi * stride + ki * dilation) as isize - padding as isize;
                                let iw = (oj * stride + kj * dilation) as isize - padding as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let x = input
                                    [((b * cin + ci) * h + ih as usize) * w + iw as usize];
                                let wv = weight[((co * cin + ci) * kh + ki) * kw + kj];
                                acc += x * wv;
                            }
                        }
                    }
                    out[((b * cout + co) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Direct transposed convolution: scatter each input value through the kernel.
/// `weight` is `[cin, cout, kh, kw]` where `cin` matches the input.
#[allow(clippy::too_many_arguments)]
pub fn naive_tconv2d(
    input: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    padding: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + kh - 2 * padding;
    let ow = (w - 1) * stride + kw - 2 * padding;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for ci in 0..cin {
            for ih in 0..h {
                for iw in 0..w {
                    let x = input[((b * cin + ci) * h + ih) * w + iw];
                    for co in 0..cout {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ohr = (ih * stride + ki) as isize - padding as isize;
                                let owr = (iw * stride + kj) as isize - padding as isize;
                                if ohr < 0 || owr < 0 || ohr >= oh as isize || owr >= ow as isize {
                                    continue;
                                }
                                let wv = weight[((ci * cout + co) * kh + ki) * kw + kj];
                                out[((b * cout + co) * oh + ohr as usize) * ow + owr as usize] +=
                                    x * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Brute-force inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central finite differences at selected coordinates only.
pub fn finite_diff_at(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut g = Vec::with_capacity(coords.len());
    let mut xp = x.to_vec();
    for &i in coords {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Relative error with an absolute floor so near-zero gradients do not blow
/// up the denominator: |a-b| / max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

pub fn assert_grads_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a, n);
        assert!(
            e < tol,
            "{what}: grad[{i}] analytic={a:.9e} numeric={n:.9e} rel_err={e:.3e} tol={tol:.1e}"
        );
    }
}

/// Reference bilinear sample (align-corners disabled), evaluated per output
/// pixel straight from the sampling formula.
pub fn bilinear_reference(input: &[f64], h: usize, w: usize, scale: usize) -> Vec<f64> {
    let (oh, ow) = (h * scale, w * scale);
    let sample = |y: f64, x: f64| -> f64 {
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        input[y0 * w + x0] * (1.0 - fy) * (1.0 - fx)
            + input[y0 * w + x1] * (1.0 - fy) * fx
            + input[y1 * w + x0] * fy * (1.0 - fx)
            + input[y1 * w + x1] * fy * fx
    };
    let mut out = vec![0.0; oh * ow];
    for oi in 0..oh {
        for oj in 0..ow {
            let sy = (oi as f64 + 0.5) / scale as f64 - 0.5;
            let sx = (oj as f64 + 0.5) / scale as f64 - 0.5;
            out[oi * ow + oj] = sample(sy, sx);
        }
    }
    out
}

/// Two-line PSNR oracle.
pub fn psnr_naive(a: &[f64], b: &[f64], max_value: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (max_value * max_value / mse).log10()
}

/// Per-window SSIM oracle: explicit loops over every valid window position,
/// Gaussian weights computed in place.
pub fn ssim_naive(a: &[f64], b: &[f64], h: usize, w: usize, max_value: f64) -> f64 {
    let size = 11usize;
    let sigma = 1.5f64;
    assert!(h >= size && w >= size);
    let mut win = vec![0.0; size * size];
    let mid = (size / 2) as f64;
    let mut norm = 0.0;
    for i in 0..size {
        for j in 0..size {
            let v = (-((i as f64 - mid).powi(2) + (j as f64 - mid).powi(2))
                / (2.0 * sigma * sigma))
                .exp();
            win[i * size + j] = v;
            norm += v;
        }
    }
    for v in &mut win {
        *v /= norm;
    }
    let c1 = (0.01 * max_value).powi(2);
    let c2 = (0.03 * max_value).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(h - size) {
        for left in 0..=(w - size) {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wv = win[i * size + j];
                    mu_a += wv * a[(top + i) * w + left + j];
                    mu_b += wv * b[(top + i) * w + left + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wv = win[i * size + j];
                    let da = a[(top + i) * w + left + j] - mu_a;
                    let db = b[(top + i) * w + left + j] - mu_b;
                    va += wv * da * da;
                    vb += wv * db * db;
                    cov += wv * da * db;
                }
            }
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Scalar Adam recurrence, written out step by step.
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        ScalarAdam {
            m: 0.0,
            v: 0.0,
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&mut self, w: f64, grad: f64) -> f64 {
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let mhat = self.m / (1.0 - self.beta1.powi(self.t as i32));
        let vhat = self.v / (1.0 - self.beta2.powi(self.t as i32));
        w - self.lr * mhat / (vhat.sqrt() + self.eps)
    }
}
