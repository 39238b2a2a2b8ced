//! Rank-4 tensors `[N, C, H, W]` with reverse-mode automatic differentiation.
//!
//! The op set is exactly what the inpainting networks need: the convolution
//! family (strided, dilated, transposed), resize, dense, instance norm,
//! pointwise activations and the scalar reductions the losses are built from.

mod kernels;
mod ops;
mod tape;

pub use kernels::{conv_out_dim, tconv_out_dim, ConvGeometry};
pub use ops::{Activation, ResizeMode};
pub use tape::{Op, Tape, TensorId};

use crate::scalar::Scalar;
use std::fmt;
use std::sync::Arc;

/// Tensor shape `[N, C, H, W]`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a scalar result, `[1,1,1,1]`.
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Row-major flat index.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.n, self.c, self.h, self.w)
    }
}

/// Errors raised by tensor construction, ops and backward passes.
#[derive(thiserror::Error, Debug)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    LengthMismatch {
        len: usize,
        shape: Shape,
        expected: usize,
    },
    #[error("{op}: {dim} mismatch, expected {expected} but got {got}")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: shapes {lhs} and {rhs} differ")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error(
        "{op}: empty output for input {h}x{w} with kernel {kernel}, stride {stride}, \
         padding {padding}, dilation {dilation}"
    )]
    EmptyOutput {
        op: &'static str,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    #[error("{op}: {what} must be >= {min}, got {got}")]
    BadParameter {
        op: &'static str,
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss of shape [1,1,1,1], got {0}")]
    NonScalarLoss(Shape),
    #[error("loss does not depend on any tracked tensor")]
    UntrackedLoss,
    #[error("backward already ran on this tape; call reset() first")]
    BackwardAlreadyRan,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Owned tensor storage: a shape plus row-major values behind an `Arc` so
/// tape nodes can alias parameter data without copying it.
#[derive(Clone, Debug)]
pub struct TensorData<S> {
    shape: Shape,
    values: Arc<Vec<S>>,
}

impl<S: Scalar> TensorData<S> {
    pub fn new(shape: Shape, values: Vec<S>) -> Result<Self, TensorError> {
        if values.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                len: values.len(),
                shape,
                expected: shape.numel(),
            });
        }
        Ok(TensorData {
            shape,
            values: Arc::new(values),
        })
    }

    pub fn from_shared(shape: Shape, values: Arc<Vec<S>>) -> Result<Self, TensorError> {
        if values.len() != shape.numel() {
            return Err(TensorError::LengthMismatch {
                len: values.len(),
                shape,
                expected: shape.numel(),
            });
        }
        Ok(TensorData { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        TensorData {
            shape,
            values: Arc::new(vec![S::zero(); shape.numel()]),
        }
    }

    pub fn filled(shape: Shape, v: S) -> Self {
        TensorData {
            shape,
            values: Arc::new(vec![v; shape.numel()]),
        }
    }

    /// One value wrapped as a `[1,1,1,1]` tensor.
    pub fn scalar(v: S) -> Self {
        TensorData::filled(Shape::scalar(), v)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut values = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        values.push(f(n, c, h, w));
                    }
                }
            }
        }
        TensorData {
            shape,
            values: Arc::new(values),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn shared(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.values)
    }

    /// Mutable access; clones the buffer only if it is aliased elsewhere.
    pub fn values_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.values).as_mut_slice()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> S {
        self.values[self.shape.index(n, c, h, w)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        TensorData {
            shape: self.shape,
            values: Arc::new(self.values.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Mean absolute difference against another tensor of the same shape.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mean_abs_diff",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        Ok(sum / self.shape.numel() as f64)
    }

    /// Convert element type (used to move data between f32 and f64 worlds).
    pub fn cast<T: Scalar>(&self) -> TensorData<T> {
        TensorData {
            shape: self.shape,
            values: Arc::new(self.values.iter().map(|&v| T::from_f64(v.as_f64())).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.numel(), 120);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.index(1, 2, 3, 4), 119);
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = TensorData::<f64>::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { .. }));
    }

    #[test]
    fn values_mut_keeps_aliases_intact() {
        let mut a = TensorData::<f64>::filled(Shape::new(1, 1, 1, 2), 1.0);
        let alias = a.clone();
        a.values_mut()[0] = 5.0;
        assert_eq!(alias.values(), &[1.0, 1.0]);
        assert_eq!(a.values(), &[5.0, 1.0]);
    }
}
