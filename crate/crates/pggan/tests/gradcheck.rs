//! Central finite-difference checks (step 1e-4, f64) for every
//! differentiable op, against the tape's analytic gradients.

mod common;

use common::*;
use pggan::tensor::{Activation, ResizeMode, Shape, Tape, TensorData, TensorId};

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn leaf(tape: &mut Tape<f64>, shape: Shape, vals: &[f64], track: bool) -> TensorId {
    tape.leaf(TensorData::new(shape, vals.to_vec()).unwrap(), track)
}

/// Random values bounded away from zero so relu/abs kinks are never within
/// one finite-difference step.
fn rand_vec_nokink(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    rand_vec(r, n, 0.05, 1.0)
        .into_iter()
        .zip(rand_vec(r, n, 0.0, 1.0))
        .map(|(m, s)| if s < 0.5 { -m } else { m })
        .collect()
}

/// Checks every coordinate of every tracked argument of `forward`.
/// `forward` maps the full set of argument values to the scalar loss.
fn check_args(args: &[(&str, Shape, Vec<f64>)], forward: &dyn Fn(&[Vec<f64>]) -> f64) {
    let vals: Vec<Vec<f64>> = args.iter().map(|(_, _, v)| v.clone()).collect();

    // analytic side: one tape pass via the same closure trick is not
    // possible, so each test wires its own tape; here we only do numeric.
    for (ai, (name, _, v)) in args.iter().enumerate() {
        let mut f = |x: &[f64]| {
            let mut all = vals.clone();
            all[ai] = x.to_vec();
            forward(&all)
        };
        let numeric = finite_diff(&mut f, v, H);
        let analytic = ANALYTIC.with(|a| a.borrow()[ai].clone());
        assert_grads_close(&analytic, &numeric, TOL, name);
    }
}

thread_local! {
    static ANALYTIC: std::cell::RefCell<Vec<Vec<f64>>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs the tape once on the base values, stores analytic grads per arg,
/// then compares against finite differences of the scalar function.
fn gradcheck(
    args: Vec<(&str, Shape, Vec<f64>)>,
    build: impl Fn(&mut Tape<f64>, &[TensorId]) -> TensorId,
) {
    // Analytic pass.
    let mut tape = Tape::<f64>::new();
    let ids: Vec<TensorId> = args
        .iter()
        .map(|(_, s, v)| leaf(&mut tape, *s, v, true))
        .collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();
    ANALYTIC.with(|a| *a.borrow_mut() = grads);

    // Numeric passes re-run the same construction on fresh tapes.
    let forward = |vals: &[Vec<f64>]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<TensorId> = args
            .iter()
            .zip(vals)
            .map(|((_, s, _), v)| leaf(&mut tape, *s, v, false))
            .collect();
        let loss = build(&mut tape, &ids);
        tape.value(loss)
    };
    check_args(&args, &forward);
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(10);
    for &(n, cin, cout, h, w, k, s, p, d) in &[
        (2usize, 3usize, 2usize, 6usize, 6usize, 3usize, 1usize, 1usize, 1usize),
        (1, 2, 3, 8, 8, 3, 2, 1, 2),
        (1, 1, 2, 7, 7, 5, 2, 2, 1),
    ] {
        let x = rand_vec(&mut r, n * cin * h * w, -1.0, 1.0);
        let wv = rand_vec(&mut r, cout * cin * k * k, -0.7, 0.7);
        let bv = rand_vec(&mut r, cout, -0.3, 0.3);
        gradcheck(
            vec![
                ("conv.input", Shape::new(n, cin, h, w), x),
                ("conv.weight", Shape::new(cout, cin, k, k), wv),
                ("conv.bias", Shape::new(1, cout, 1, 1), bv),
            ],
            move |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], Some(ids[2]), s, p, d).unwrap();
                let t = tape.pointwise(y, Activation::Tanh);
                tape.mean_all(t)
            },
        );
    }
}

#[test]
fn transposed_conv2d_gradients() {
    let mut r = rng(11);
    for &(n, cin, cout, h, w, k, s, p) in &[
        (1usize, 2usize, 2usize, 4usize, 4usize, 3usize, 2usize, 1usize),
        (2, 1, 2, 3, 3, 4, 2, 1),
    ] {
        let x = rand_vec(&mut r, n * cin * h * w, -1.0, 1.0);
        let wv = rand_vec(&mut r, cin * cout * k * k, -0.7, 0.7);
        let bv = rand_vec(&mut r, cout, -0.3, 0.3);
        gradcheck(
            vec![
                ("tconv.input", Shape::new(n, cin, h, w), x),
                ("tconv.weight", Shape::new(cin, cout, k, k), wv),
                ("tconv.bias", Shape::new(1, cout, 1, 1), bv),
            ],
            move |tape, ids| {
                let y = tape
                    .transposed_conv2d(ids[0], ids[1], Some(ids[2]), s, p)
                    .unwrap();
                let t = tape.pointwise(y, Activation::Tanh);
                tape.mean_all(t)
            },
        );
    }
}

#[test]
fn resize_gradients() {
    let mut r = rng(12);
    for mode in [ResizeMode::Nearest, ResizeMode::Bilinear] {
        let x = rand_vec(&mut r, 2 * 2 * 4 * 3, -1.0, 1.0);
        gradcheck(
            vec![("resize.input", Shape::new(2, 2, 4, 3), x)],
            move |tape, ids| {
                let y = tape.resize(ids[0], 2, mode).unwrap();
                let t = tape.pointwise(y, Activation::Tanh);
                tape.mean_all(t)
            },
        );
    }
}

#[test]
fn dense_gradients() {
    let mut r = rng(13);
    let x = rand_vec(&mut r, 2 * 3 * 2 * 2, -1.0, 1.0);
    let wv = rand_vec(&mut r, 4 * 12, -0.5, 0.5);
    let bv = rand_vec(&mut r, 4, -0.3, 0.3);
    gradcheck(
        vec![
            ("dense.input", Shape::new(2, 3, 2, 2), x),
            ("dense.weight", Shape::new(4, 12, 1, 1), wv),
            ("dense.bias", Shape::new(1, 4, 1, 1), bv),
        ],
        |tape, ids| {
            let y = tape.dense(ids[0], ids[1], ids[2]).unwrap();
            let t = tape.pointwise(y, Activation::Tanh);
            tape.mean_all(t)
        },
    );
}

#[test]
fn instance_norm_gradients() {
    let mut r = rng(14);
    let x = rand_vec(&mut r, 2 * 3 * 4 * 4, -1.5, 1.5);
    let g = rand_vec(&mut r, 3, 0.5, 1.5);
    let s = rand_vec(&mut r, 3, -0.5, 0.5);
    gradcheck(
        vec![
            ("inorm.input", Shape::new(2, 3, 4, 4), x),
            ("inorm.gain", Shape::new(1, 3, 1, 1), g),
            ("inorm.shift", Shape::new(1, 3, 1, 1), s),
        ],
        |tape, ids| {
            let y = tape.instance_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
            let t = tape.pointwise(y, Activation::Tanh);
            tape.mean_all(t)
        },
    );
}

#[test]
fn pointwise_gradients() {
    let mut r = rng(15);
    for kind in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        let x = rand_vec_nokink(&mut r, 2 * 2 * 3 * 3);
        gradcheck(
            vec![("pointwise.input", Shape::new(2, 2, 3, 3), x)],
            move |tape, ids| {
                let y = tape.pointwise(ids[0], kind);
                tape.mean_all(y)
            },
        );
    }
}

#[test]
fn scalar_op_gradients() {
    let mut r = rng(16);
    let a = rand_vec_nokink(&mut r, 2 * 2 * 2 * 2);
    let b = rand_vec(&mut r, 16, -1.0, 1.0)
        .into_iter()
        .zip(&a)
        // keep |a - b| away from the kink of |.|
        .map(|(bv, &av)| if (av - bv).abs() < 0.05 { bv + 0.1 } else { bv })
        .collect::<Vec<_>>();
    gradcheck(
        vec![
            ("lhs", Shape::new(2, 2, 2, 2), a),
            ("rhs", Shape::new(2, 2, 2, 2), b),
        ],
        |tape, ids| {
            let s = tape.sub(ids[0], ids[1]).unwrap();
            let ab = tape.abs(s);
            let aff = tape.affine(ab, 1.7, 0.3);
            let sum = tape.add(aff, ids[0]).unwrap();
            tape.mean_all(sum)
        },
    );

    // log_clamped away from the clamp
    let x = rand_vec(&mut r, 8, 0.2, 0.9);
    gradcheck(
        vec![("log.input", Shape::new(1, 2, 2, 2), x)],
        |tape, ids| {
            let l = tape.log_clamped(ids[0], 1e-7);
            let s = tape.sum_all(l);
            tape.affine(s, -1.0, 0.0)
        },
    );
}

/// The composite of the module example: conv -> norm -> relu -> dense into
/// a scalar loss; every parameter matches finite differences.
#[test]
fn composite_network_gradients() {
    let mut r = rng(17);
    let (n, cin, cout, h, w) = (2usize, 2usize, 3usize, 6usize, 6usize);
    let x = rand_vec(&mut r, n * cin * h * w, -1.0, 1.0);
    let wv = rand_vec(&mut r, cout * cin * 9, -0.6, 0.6);
    let bv = rand_vec(&mut r, cout, -0.2, 0.2);
    let g = rand_vec(&mut r, cout, 0.7, 1.3);
    let s = rand_vec(&mut r, cout, -0.2, 0.2);
    let f = cout * 3 * 3; // after stride-2 conv on 6x6
    let dw = rand_vec(&mut r, 2 * f, -0.4, 0.4);
    let db = rand_vec(&mut r, 2, -0.2, 0.2);
    gradcheck(
        vec![
            ("net.x", Shape::new(n, cin, h, w), x),
            ("net.conv.w", Shape::new(cout, cin, 3, 3), wv),
            ("net.conv.b", Shape::new(1, cout, 1, 1), bv),
            ("net.norm.gain", Shape::new(1, cout, 1, 1), g),
            ("net.norm.shift", Shape::new(1, cout, 1, 1), s),
            ("net.dense.w", Shape::new(2, f, 1, 1), dw),
            ("net.dense.b", Shape::new(1, 2, 1, 1), db),
        ],
        move |tape, ids| {
            let c = tape.conv2d(ids[0], ids[1], Some(ids[2]), 2, 1, 1).unwrap();
            let nn = tape.instance_norm(c, ids[3], ids[4], 1e-5).unwrap();
            let a = tape.pointwise(nn, Activation::Relu);
            let d = tape.dense(a, ids[5], ids[6]).unwrap();
            let t = tape.pointwise(d, Activation::Tanh);
            tape.mean_all(t)
        },
    );
}

/// A tensor consumed twice must accumulate both contributions.
#[test]
fn fan_out_accumulates_once_per_use() {
    let mut r = rng(18);
    let x = rand_vec(&mut r, 4, -1.0, 1.0);
    gradcheck(
        vec![("fanout.x", Shape::new(1, 1, 2, 2), x)],
        |tape, ids| {
            let t = tape.pointwise(ids[0], Activation::Tanh);
            let s = tape.pointwise(ids[0], Activation::Sigmoid);
            let sum = tape.add(t, s).unwrap();
            let both = tape.add(sum, ids[0]).unwrap();
            tape.mean_all(both)
        },
    );
}
