//! Adam with bias correction, applied to one routing group at a time.

use crate::params::{ParamStore, RoutingGroup};
use crate::scalar::Scalar;
use std::collections::HashMap;

/// Optimizer hyperparameters (stored in f64; converted per element type).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for the parameters of one routing group,
/// plus that group's own step counter for bias correction.
#[derive(Clone, Debug, Default)]
pub struct AdamMoments<S> {
    pub step: u64,
    pub m: HashMap<String, Vec<S>>,
    pub v: HashMap<String, Vec<S>>,
}

impl<S: Scalar> AdamMoments<S> {
    pub fn new() -> Self {
        AdamMoments {
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }
}

/// One Adam update over every parameter of `group`. Missing gradients are
/// treated as zero. Moments persist in `moments`; its step counter advances
/// once per call.
pub fn adam_step<S: Scalar>(
    moments: &mut AdamMoments<S>,
    store: &mut ParamStore<S>,
    group: RoutingGroup,
    hyper: &AdamHyper,
) {
    moments.step += 1;
    let t = moments.step as i32;
    let b1 = S::from_f64(hyper.beta1);
    let b2 = S::from_f64(hyper.beta2);
    let one = S::one();
    let lr = S::from_f64(hyper.lr);
    let eps = S::from_f64(hyper.eps);
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);

    for p in store.iter_mut().filter(|p| p.group == group) {
        let n = p.data.shape().numel();
        let m = moments
            .m
            .entry(p.name.clone())
            .or_insert_with(|| vec![S::zero(); n]);
        let v = moments
            .v
            .entry(p.name.clone())
            .or_insert_with(|| vec![S::zero(); n]);
        let zero_grad;
        let grad: &[S] = match &p.grad {
            Some(g) => g,
            None => {
                zero_grad = vec![S::zero(); n];
                &zero_grad
            }
        };
        let data = p.data.values_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, TensorData};

    fn store_with(name: &str, vals: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(
            name,
            RoutingGroup::Generator,
            TensorData::new(Shape::new(1, 1, 1, vals.len()), vals).unwrap(),
        )
        .unwrap();
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = store_with("generator/w", vec![0.5, -0.25]);
        store.get_mut("generator/w").unwrap().grad = Some(vec![0.0, 0.0]);
        let mut mom = AdamMoments::new();
        adam_step(&mut mom, &mut store, RoutingGroup::Generator, &AdamHyper::default());
        assert_eq!(store.get("generator/w").unwrap().data.values(), &[0.5, -0.25]);
        assert_eq!(mom.step, 1);
    }

    #[test]
    fn missing_gradients_read_as_zero() {
        let mut store = store_with("generator/w", vec![1.0]);
        let mut mom = AdamMoments::new();
        adam_step(&mut mom, &mut store, RoutingGroup::Generator, &AdamHyper::default());
        assert_eq!(store.get("generator/w").unwrap().data.values(), &[1.0]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let hyper = AdamHyper {
            lr: 0.01,
            ..AdamHyper::default()
        };
        let mut store = store_with("generator/w", vec![2.0]);
        store.get_mut("generator/w").unwrap().grad = Some(vec![0.3]);
        let mut mom = AdamMoments::new();
        adam_step(&mut mom, &mut store, RoutingGroup::Generator, &hyper);
        let w = store.get("generator/w").unwrap().data.values()[0];
        // bias-corrected first step: lr * g / (|g| + eps') ~ lr
        assert!((2.0 - w - hyper.lr).abs() < 1e-6, "moved by {}", 2.0 - w);
    }
}
