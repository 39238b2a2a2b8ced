//! Op constructors: validate shapes, run the forward kernel, record the op.

use super::kernels::{self, conv_out_dim, tconv_out_dim, ConvGeometry};
use super::tape::{Op, Tape, TensorId};
use super::{Shape, TensorData, TensorError};
use crate::scalar::Scalar;

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<S: Scalar>(&self, x: S) -> S {
        match *self {
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > S::zero() {
                    x
                } else {
                    S::from_f64(a) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => S::one() / (S::one() + (-x).exp()),
        }
    }

    /// Derivative for kinds whose slope is a function of the input
    /// (relu subgradient at 0 is 0).
    pub(super) fn derivative_from_input<S: Scalar>(&self, x: S) -> S {
        match *self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::from_f64(a)
                }
            }
            _ => unreachable!("tanh/sigmoid derive from the output"),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(a) => format!("leaky_relu({a})"),
            Activation::Tanh => "tanh".into(),
            Activation::Sigmoid => "sigmoid".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

impl<S: Scalar> Tape<S> {
    /// Cross-correlation with stride, zero padding and dilation.
    /// `weight` is `[cout, cin, kh, kw]`, `bias` (optional) has `cout` elements.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "conv2d";
        if stride < 1 {
            return Err(TensorError::BadParameter {
                op: OP,
                what: "stride",
                min: 1,
                got: stride,
            });
        }
        if dilation < 1 {
            return Err(TensorError::BadParameter {
                op: OP,
                what: "dilation",
                min: 1,
                got: dilation,
            });
        }
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.c != ws.c {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "input channels",
                expected: ws.c,
                got: xs.c,
            });
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    dim: "bias elements",
                    expected: ws.n,
                    got: bs.numel(),
                });
            }
        }
        let oh = conv_out_dim(xs.h, ws.h, stride, padding, dilation);
        let ow = conv_out_dim(xs.w, ws.w, stride, padding, dilation);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(TensorError::EmptyOutput {
                    op: OP,
                    h: xs.h,
                    w: xs.w,
                    kernel: ws.h,
                    stride,
                    padding,
                    dilation,
                })
            }
        };
        let geom = ConvGeometry {
            n: xs.n,
            cin: xs.c,
            h: xs.h,
            w: xs.w,
            cout: ws.n,
            kh: ws.h,
            kw: ws.w,
            stride,
            padding,
            dilation,
            oh,
            ow,
        };
        let out = kernels::conv_forward(
            self.values(input),
            self.values(weight),
            bias.map(|b| self.values(b).to_vec()).as_deref(),
            &geom,
        );
        let data = TensorData::new(Shape::new(xs.n, ws.n, oh, ow), out)?;
        let tracked = self.is_tracked(input)
            || self.is_tracked(weight)
            || bias.map(|b| self.is_tracked(b)).unwrap_or(false);
        Ok(self.push(
            data,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            tracked,
        ))
    }

    /// Adjoint of `conv2d` with the same stride/padding. `weight` is
    /// `[cin, cout, kh, kw]` where `cin` matches the input — the identical
    /// layout a forward conv would use going the other way.
    pub fn transposed_conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "transposed_conv2d";
        if stride < 1 {
            return Err(TensorError::BadParameter {
                op: OP,
                what: "stride",
                min: 1,
                got: stride,
            });
        }
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.c != ws.n {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "input channels",
                expected: ws.n,
                got: xs.c,
            });
        }
        let cout = ws.c;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != cout {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    dim: "bias elements",
                    expected: cout,
                    got: bs.numel(),
                });
            }
        }
        let oh = tconv_out_dim(xs.h, ws.h, stride, padding);
        let ow = tconv_out_dim(xs.w, ws.w, stride, padding);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TensorError::EmptyOutput {
                    op: OP,
                    h: xs.h,
                    w: xs.w,
                    kernel: ws.h,
                    stride,
                    padding,
                    dilation: 1,
                })
            }
        };
        // Geometry of the adjoint conv: maps the tconv output back to its input.
        let geom = ConvGeometry {
            n: xs.n,
            cin: cout,
            h: oh,
            w: ow,
            cout: xs.c,
            kh: ws.h,
            kw: ws.w,
            stride,
            padding,
            dilation: 1,
            oh: xs.h,
            ow: xs.w,
        };
        let mut out = kernels::conv_input_grad(self.values(input), self.values(weight), &geom);
        if let Some(b) = bias {
            let bv = self.values(b).to_vec();
            let hw = oh * ow;
            for item in 0..xs.n {
                for (co, &bval) in bv.iter().enumerate() {
                    let base = (item * cout + co) * hw;
                    for v in &mut out[base..base + hw] {
                        *v = *v + bval;
                    }
                }
            }
        }
        let data = TensorData::new(Shape::new(xs.n, cout, oh, ow), out)?;
        let tracked = self.is_tracked(input)
            || self.is_tracked(weight)
            || bias.map(|b| self.is_tracked(b)).unwrap_or(false);
        Ok(self.push(
            data,
            Op::TConv2d {
                input,
                weight,
                bias,
                geom,
            },
            tracked,
        ))
    }

    /// Integer-factor upsampling.
    pub fn resize(
        &mut self,
        input: TensorId,
        scale: usize,
        mode: ResizeMode,
    ) -> Result<TensorId, TensorError> {
        if scale < 2 {
            return Err(TensorError::BadParameter {
                op: "resize",
                what: "scale",
                min: 2,
                got: scale,
            });
        }
        let s = self.shape(input);
        let out = match mode {
            ResizeMode::Nearest => {
                kernels::resize_nearest_forward(self.values(input), s.n, s.c, s.h, s.w, scale)
            }
            ResizeMode::Bilinear => {
                kernels::resize_bilinear_forward(self.values(input), s.n, s.c, s.h, s.w, scale)
            }
        };
        let data = TensorData::new(Shape::new(s.n, s.c, s.h * scale, s.w * scale), out)?;
        let tracked = self.is_tracked(input);
        Ok(self.push(data, Op::Resize { input, mode, scale }, tracked))
    }

    /// Fully connected layer over the flattened input: `weight` is
    /// `[fout, f, 1, 1]` with `f = c*h*w`, output `[n, fout, 1, 1]`.
    pub fn dense(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "dense";
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let f = xs.c * xs.h * xs.w;
        if ws.c != f || ws.h != 1 || ws.w != 1 {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "input features",
                expected: ws.c,
                got: f,
            });
        }
        let fout = ws.n;
        if self.shape(bias).numel() != fout {
            return Err(TensorError::DimMismatch {
                op: OP,
                dim: "bias elements",
                expected: fout,
                got: self.shape(bias).numel(),
            });
        }
        let out = kernels::dense_forward(
            self.values(input),
            self.values(weight),
            self.values(bias),
            xs.n,
            f,
            fout,
        );
        let data = TensorData::new(Shape::new(xs.n, fout, 1, 1), out)?;
        let tracked =
            self.is_tracked(input) || self.is_tracked(weight) || self.is_tracked(bias);
        Ok(self.push(
            data,
            Op::Dense {
                input,
                weight,
                bias,
            },
            tracked,
        ))
    }

    /// Per-sample, per-channel normalization; `gain`/`shift` hold `c` elements.
    pub fn instance_norm(
        &mut self,
        input: TensorId,
        gain: TensorId,
        shift: TensorId,
        eps: f64,
    ) -> Result<TensorId, TensorError> {
        const OP: &str = "instance_norm";
        let s = self.shape(input);
        if s.h * s.w == 0 {
            return Err(TensorError::BadParameter {
                op: OP,
                what: "spatial extent",
                min: 1,
                got: 0,
            });
        }
        for (id, role) in [(gain, "gain elements"), (shift, "shift elements")] {
            if self.shape(id).numel() != s.c {
                return Err(TensorError::DimMismatch {
                    op: OP,
                    dim: role,
                    expected: s.c,
                    got: self.shape(id).numel(),
                });
            }
        }
        let out = kernels::instance_norm_forward(
            self.values(input),
            self.values(gain),
            self.values(shift),
            s.n,
            s.c,
            s.h * s.w,
            eps,
        );
        let data = TensorData::new(s, out)?;
        let tracked =
            self.is_tracked(input) || self.is_tracked(gain) || self.is_tracked(shift);
        Ok(self.push(
            data,
            Op::InstanceNorm {
                input,
                gain,
                shift,
                eps,
            },
            tracked,
        ))
    }

    pub fn pointwise(&mut self, input: TensorId, kind: Activation) -> TensorId {
        let data = self.data(input).map(|v| kind.apply(v));
        let tracked = self.is_tracked(input);
        self.push(data, Op::Pointwise { input, kind }, tracked)
    }

    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op("add", lhs, rhs, |a, b| a + b, Op::Add { lhs, rhs })
    }

    pub fn sub(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId, TensorError> {
        self.zip_op("sub", lhs, rhs, |a, b| a - b, Op::Sub { lhs, rhs })
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        lhs: TensorId,
        rhs: TensorId,
        f: impl Fn(S, S) -> S,
        op: Op,
    ) -> Result<TensorId, TensorError> {
        let (ls, rs) = (self.shape(lhs), self.shape(rhs));
        if ls != rs {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: ls,
                rhs: rs,
            });
        }
        let vals = self
            .values(lhs)
            .iter()
            .zip(self.values(rhs))
            .map(|(&a, &b)| f(a, b))
            .collect();
        let data = TensorData::new(ls, vals)?;
        let tracked = self.is_tracked(lhs) || self.is_tracked(rhs);
        Ok(self.push(data, op, tracked))
    }

    pub fn abs(&mut self, input: TensorId) -> TensorId {
        let data = self.data(input).map(|v| v.abs());
        let tracked = self.is_tracked(input);
        self.push(data, Op::Abs { input }, tracked)
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, input: TensorId, mul: f64, add: f64) -> TensorId {
        let (m, a) = (S::from_f64(mul), S::from_f64(add));
        let data = self.data(input).map(|v| m * v + a);
        let tracked = self.is_tracked(input);
        self.push(data, Op::Affine { input, mul, add }, tracked)
    }

    /// `ln(max(x, eps))` — keeps adversarial losses finite at saturation.
    pub fn log_clamped(&mut self, input: TensorId, eps: f64) -> TensorId {
        let e = S::from_f64(eps);
        let data = self.data(input).map(|v| if v > e { v.ln() } else { e.ln() });
        let tracked = self.is_tracked(input);
        self.push(data, Op::LogClamped { input, eps }, tracked)
    }

    pub fn mean_all(&mut self, input: TensorId) -> TensorId {
        let numel = self.shape(input).numel();
        let sum: S = self.values(input).iter().copied().sum();
        let data = TensorData::scalar(sum / S::from_f64(numel as f64));
        let tracked = self.is_tracked(input);
        self.push(data, Op::MeanAll { input }, tracked)
    }

    pub fn sum_all(&mut self, input: TensorId) -> TensorId {
        let sum: S = self.values(input).iter().copied().sum();
        let data = TensorData::scalar(sum);
        let tracked = self.is_tracked(input);
        self.push(data, Op::SumAll { input }, tracked)
    }

    /// Mean of `|a - b|` over every element: the L1 term of the objective.
    pub fn mean_abs_diff(
        &mut self,
        a: TensorId,
        b: TensorId,
    ) -> Result<TensorId, TensorError> {
        let d = self.sub(a, b)?;
        let ad = self.abs(d);
        Ok(self.mean_all(ad))
    }
}
