//! Gradient tape: an append-only arena of tensors plus the op that produced
//! each one. Backward walks the arena in reverse creation order, so every
//! use of a tensor contributes to its gradient exactly once.

use super::kernels::{self, ConvGeometry};
use super::ops::{Activation, ResizeMode};
use super::{Shape, TensorData, TensorError};
use crate::scalar::Scalar;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TensorId(pub(super) usize);

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        geom: ConvGeometry,
    },
    /// `geom` describes the adjoint convolution: its input space is this
    /// op's output space.
    TConv2d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        geom: ConvGeometry,
    },
    Resize {
        input: TensorId,
        mode: ResizeMode,
        scale: usize,
    },
    Dense {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    },
    InstanceNorm {
        input: TensorId,
        gain: TensorId,
        shift: TensorId,
        eps: f64,
    },
    Pointwise {
        input: TensorId,
        kind: Activation,
    },
    Add {
        lhs: TensorId,
        rhs: TensorId,
    },
    Sub {
        lhs: TensorId,
        rhs: TensorId,
    },
    Abs {
        input: TensorId,
    },
    Affine {
        input: TensorId,
        mul: f64,
        add: f64,
    },
    LogClamped {
        input: TensorId,
        eps: f64,
    },
    MeanAll {
        input: TensorId,
    },
    SumAll {
        input: TensorId,
    },
}

struct Node<S> {
    data: TensorData<S>,
    grad: Option<Vec<S>>,
    tracked: bool,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    ops: Vec<Op>,
    recording: bool,
    spent: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A tape that records ops for backward.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            recording: true,
            spent: false,
        }
    }

    /// Forward-only tape: values flow, nothing is differentiable.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop all recorded tensors and ops; the tape can record again.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.ops.clear();
        self.spent = false;
    }

    pub fn leaf(&mut self, data: TensorData<S>, requires_grad: bool) -> TensorId {
        let tracked = self.recording && requires_grad;
        self.push(data, Op::Leaf, tracked)
    }

    pub(super) fn push(&mut self, data: TensorData<S>, op: Op, tracked: bool) -> TensorId {
        let tracked = tracked && self.recording;
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node {
            data,
            grad: None,
            tracked,
        });
        self.ops.push(op);
        TensorId(self.nodes.len() - 1)
    }

    pub fn data(&self, id: TensorId) -> &TensorData<S> {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> Shape {
        self.nodes[id.0].data.shape()
    }

    /// The single value of a `[1,1,1,1]` tensor.
    pub fn value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.shape(id), Shape::scalar());
        self.nodes[id.0].data.values()[0]
    }

    pub fn is_tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Gradient accumulated during backward; `None` means unreachable (zero).
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub(super) fn values(&self, id: TensorId) -> &[S] {
        self.nodes[id.0].data.values()
    }

    fn accumulate(&mut self, id: TensorId, contrib: Vec<S>) {
        debug_assert_eq!(contrib.len(), self.nodes[id.0].data.shape().numel());
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Populate gradients of every tracked tensor reachable from `loss`.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TensorError> {
        if self.spent {
            return Err(TensorError::BackwardAlreadyRan);
        }
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].tracked {
            return Err(TensorError::UntrackedLoss);
        }
        self.spent = true;
        self.nodes[loss.0].grad = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].tracked || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = self.ops[idx].clone();
            self.backward_op(idx, op);
        }
        Ok(())
    }

    fn out_grad(&self, idx: usize) -> Vec<S> {
        self.nodes[idx].grad.clone().expect("output grad present")
    }

    fn backward_op(&mut self, idx: usize, op: Op) {
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let gout = self.out_grad(idx);
                if self.is_tracked(input) {
                    let w = self.nodes[weight.0].data.clone();
                    let gin = kernels::conv_input_grad(&gout, w.values(), &geom);
                    self.accumulate(input, gin);
                }
                if self.is_tracked(weight) {
                    let x = self.nodes[input.0].data.clone();
                    let gw = kernels::conv_weight_grad(&gout, x.values(), &geom);
                    self.accumulate(weight, gw);
                }
                if let Some(b) = bias {
                    if self.is_tracked(b) {
                        let gb = kernels::bias_grad(&gout, geom.n, geom.cout, geom.out_spatial());
                        self.accumulate(b, gb);
                    }
                }
            }
            Op::TConv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                // Output lives in the adjoint conv's input space.
                let gout = self.out_grad(idx);
                if self.is_tracked(input) {
                    let w = self.nodes[weight.0].data.clone();
                    let gin = kernels::conv_forward(&gout, w.values(), None, &geom);
                    self.accumulate(input, gin);
                }
                if self.is_tracked(weight) {
                    let y = self.nodes[input.0].data.clone();
                    let gw = kernels::conv_weight_grad(y.values(), &gout, &geom);
                    self.accumulate(weight, gw);
                }
                if let Some(b) = bias {
                    if self.is_tracked(b) {
                        let gb = kernels::bias_grad(&gout, geom.n, geom.cin, geom.h * geom.w);
                        self.accumulate(b, gb);
                    }
                }
            }
            Op::Resize { input, mode, scale } => {
                let gout = self.out_grad(idx);
                if self.is_tracked(input) {
                    let s = self.shape(input);
                    let gin = match mode {
                        ResizeMode::Nearest => {
                            kernels::resize_nearest_backward(&gout, s.n, s.c, s.h, s.w, scale)
                        }
                        ResizeMode::Bilinear => {
                            kernels::resize_bilinear_backward(&gout, s.n, s.c, s.h, s.w, scale)
                        }
                    };
                    self.accumulate(input, gin);
                }
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let gout = self.out_grad(idx);
                let in_shape = self.shape(input);
                let w_shape = self.shape(weight);
                let (n, f, fout) = (in_shape.n, w_shape.c, w_shape.n);
                if self.is_tracked(input) {
                    let w = self.nodes[weight.0].data.clone();
                    let gin = kernels::dense_input_grad(&gout, w.values(), n, f, fout);
                    self.accumulate(input, gin);
                }
                if self.is_tracked(weight) {
                    let x = self.nodes[input.0].data.clone();
                    let gw = kernels::dense_weight_grad(&gout, x.values(), n, f, fout);
                    self.accumulate(weight, gw);
                }
                if self.is_tracked(bias) {
                    self.accumulate(bias, kernels::dense_bias_grad(&gout, n, fout));
                }
            }
            Op::InstanceNorm {
                input,
                gain,
                shift,
                eps,
            } => {
                let gout = self.out_grad(idx);
                let s = self.shape(input);
                let x = self.nodes[input.0].data.clone();
                let g = self.nodes[gain.0].data.clone();
                let (gin, ggain, gshift) = kernels::instance_norm_backward(
                    &gout,
                    x.values(),
                    g.values(),
                    s.n,
                    s.c,
                    s.h * s.w,
                    eps,
                );
                if self.is_tracked(input) {
                    self.accumulate(input, gin);
                }
                if self.is_tracked(gain) {
                    self.accumulate(gain, ggain);
                }
                if self.is_tracked(shift) {
                    self.accumulate(shift, gshift);
                }
            }
            Op::Pointwise { input, kind } => {
                if !self.is_tracked(input) {
                    return;
                }
                let gout = self.out_grad(idx);
                let gin: Vec<S> = match kind {
                    Activation::Relu | Activation::LeakyRelu(_) => {
                        let x = self.values(input);
                        x.iter()
                            .zip(&gout)
                            .map(|(&xv, &g)| g * kind.derivative_from_input(xv))
                            .collect()
                    }
                    Activation::Tanh => {
                        let y = self.values(TensorId(idx));
                        y.iter()
                            .zip(&gout)
                            .map(|(&yv, &g)| g * (S::one() - yv * yv))
                            .collect()
                    }
                    Activation::Sigmoid => {
                        let y = self.values(TensorId(idx));
                        y.iter()
                            .zip(&gout)
                            .map(|(&yv, &g)| g * yv * (S::one() - yv))
                            .collect()
                    }
                };
                self.accumulate(input, gin);
            }
            Op::Add { lhs, rhs } => {
                let gout = self.out_grad(idx);
                if self.is_tracked(lhs) {
                    self.accumulate(lhs, gout.clone());
                }
                if self.is_tracked(rhs) {
                    self.accumulate(rhs, gout);
                }
            }
            Op::Sub { lhs, rhs } => {
                let gout = self.out_grad(idx);
                if self.is_tracked(rhs) {
                    self.accumulate(rhs, gout.iter().map(|&g| -g).collect());
                }
                if self.is_tracked(lhs) {
                    self.accumulate(lhs, gout);
                }
            }
            Op::Abs { input } => {
                if !self.is_tracked(input) {
                    return;
                }
                let gout = self.out_grad(idx);
                let x = self.values(input);
                // sign(0) = 0 convention
                let gin = x
                    .iter()
                    .zip(&gout)
                    .map(|(&xv, &g)| {
                        if xv > S::zero() {
                            g
                        } else if xv < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                self.accumulate(input, gin);
            }
            Op::Affine { input, mul, .. } => {
                if !self.is_tracked(input) {
                    return;
                }
                let m = S::from_f64(mul);
                let gin = self.out_grad(idx).iter().map(|&g| g * m).collect();
                self.accumulate(input, gin);
            }
            Op::LogClamped { input, eps } => {
                if !self.is_tracked(input) {
                    return;
                }
                let gout = self.out_grad(idx);
                let e = S::from_f64(eps);
                let x = self.values(input);
                let gin = x
                    .iter()
                    .zip(&gout)
                    .map(|(&xv, &g)| if xv > e { g / xv } else { S::zero() })
                    .collect();
                self.accumulate(input, gin);
            }
            Op::MeanAll { input } => {
                if !self.is_tracked(input) {
                    return;
                }
                let numel = self.shape(input).numel();
                let g = self.out_grad(idx)[0] / S::from_f64(numel as f64);
                self.accumulate(input, vec![g; numel]);
            }
            Op::SumAll { input } => {
                if !self.is_tracked(input) {
                    return;
                }
                let numel = self.shape(input).numel();
                let g = self.out_grad(idx)[0];
                self.accumulate(input, vec![g; numel]);
            }
        }
    }
}
