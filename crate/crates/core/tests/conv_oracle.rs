//! Optimized convolution against the nested-loop reference.

mod common;

use common::{rng, uniform};
use msfuse_core::conv::{conv2d_backward, ConvGeometry};
use msfuse_core::{conv2d, conv2d_naive, flop_count, ConvSpec, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_case(r: &mut impl Rng) -> (Tensor<f64>, ConvSpec<f64>) {
    let k = [1usize, 3, 5, 7][r.gen_range(0..4)];
    let stride = r.gen_range(1..=2);
    let c = r.gen_range(1..=6);
    let depthwise = r.gen_bool(0.5);
    let (groups, c_out) = if depthwise {
        (c, c * r.gen_range(1..=2))
    } else {
        (1, r.gen_range(1..=6))
    };
    let pad = r.gen_range(0..=k / 2);
    let h = r.gen_range(k.saturating_sub(2 * pad).max(1)..k + 8);
    let w = r.gen_range(k.saturating_sub(2 * pad).max(1)..k + 8);
    let b = r.gen_range(1..=2);
    let x = uniform(r, &[b, c, h, w], -2.0, 2.0);
    let weight = uniform(r, &[c_out, c / groups, k, k], -1.0, 1.0);
    let bias = r.gen_bool(0.5).then(|| uniform(r, &[c_out], -1.0, 1.0));
    let spec = ConvSpec::new(ConvGeometry::new((stride, stride), (pad, pad), groups), weight, bias).unwrap();
    (x, spec)
}

#[test]
fn randomized_equivalence_f64() {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let (x, spec) = random_case(&mut r);
        let fast = conv2d(&x, &spec).unwrap();
        let slow = conv2d_naive(&x, &spec).unwrap();
        worst = worst.max(fast.max_abs_diff(&slow).unwrap());
    }
    assert!(worst < 1e-6, "max |diff| = {worst:e}");
}

#[test]
fn randomized_equivalence_f32() {
    let mut r = rng(8);
    for _ in 0..200 {
        let (x, spec) = random_case(&mut r);
        let x32: Tensor<f32> = x.cast();
        let spec32 = ConvSpec::new(
            spec.geometry,
            spec.weight.cast(),
            spec.bias.as_ref().map(|b| b.cast()),
        )
        .unwrap();
        let fast = conv2d(&x32, &spec32).unwrap();
        let slow = conv2d_naive(&x32, &spec32).unwrap();
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-3);
    }
}

#[test]
fn linearity_without_bias() {
    let mut r = rng(9);
    for _ in 0..50 {
        let (x, mut spec) = random_case(&mut r);
        spec.bias = None;
        let y = uniform(&mut r, x.shape(), -2.0, 2.0);
        let (a, b) = (r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let mixed = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]).unwrap();
        let lhs = conv2d(&mixed, &spec).unwrap();
        let cx = conv2d(&x, &spec).unwrap();
        let cy = conv2d(&y, &spec).unwrap();
        let rhs = Tensor::from_fn(cx.shape(), |i| a * cx.data()[i] + b * cy.data()[i]).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
    }
}

/// Central differences of `sum(conv(x))` against the analytic VJP.
#[test]
fn backward_matches_finite_differences() {
    let mut r = rng(10);
    let eps = 1e-5;
    for _ in 0..20 {
        let (x, spec) = random_case(&mut r);
        let out_shape = conv2d(&x, &spec).unwrap().shape().to_vec();
        let ones = Tensor::ones(&out_shape).unwrap();
        let (dx, dw, db) =
            conv2d_backward(&x, &spec.weight, &spec.geometry, &ones, spec.bias.is_some()).unwrap();
        let loss = |x: &Tensor<f64>, s: &ConvSpec<f64>| conv2d_naive(x, s).unwrap().sum();
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            let n = (loss(&p, &spec) - loss(&m, &spec)) / (2.0 * eps);
            assert!((n - dx.data()[i]).abs() < 1e-6 * n.abs().max(1.0));
        }
        for i in 0..spec.weight.len() {
            let mut p = spec.clone();
            p.weight.data_mut()[i] += eps;
            let mut m = spec.clone();
            m.weight.data_mut()[i] -= eps;
            let n = (loss(&x, &p) - loss(&x, &m)) / (2.0 * eps);
            assert!((n - dw.data()[i]).abs() < 1e-6 * n.abs().max(1.0));
        }
        if let Some(db) = db {
            let plane = out_shape[0] * out_shape[2] * out_shape[3];
            assert!(db.data().iter().all(|&v| (v - plane as f64).abs() < 1e-9));
        }
    }
}

#[test]
fn flop_count_closed_form() {
    let mut r = rng(11);
    for _ in 0..50 {
        let (x, spec) = random_case(&mut r);
        let [b, _, _, _] = x.dims4().unwrap();
        let out = conv2d_naive(&x, &spec).unwrap();
        let [_, c_out, oh, ow] = out.dims4().unwrap();
        let (kh, kw) = spec.kernel();
        let cg_in = spec.weight.shape()[1];
        // count multiply-adds by walking the loop nest
        let mut macs = 0u64;
        for _ in 0..b * c_out * oh * ow {
            macs += (cg_in * kh * kw) as u64;
        }
        assert_eq!(flop_count(&spec, x.shape()).unwrap(), 2 * macs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flop_count_linear_in_batch_and_out_channels(
        b in 1usize..4, c_in in 1usize..8, c_out in 1usize..8, k in prop::sample::select(vec![1usize, 3, 5]),
        h in 5usize..12,
    ) {
        let geom = ConvGeometry::same(k, 1);
        let spec = ConvSpec::<f64>::zeros(geom, c_out, c_in, (k, k), false).unwrap();
        let one = flop_count(&spec, &[1, c_in, h, h]).unwrap();
        prop_assert_eq!(flop_count(&spec, &[b, c_in, h, h]).unwrap(), b as u64 * one);
        let wide = ConvSpec::<f64>::zeros(geom, 2 * c_out, c_in, (k, k), false).unwrap();
        prop_assert_eq!(flop_count(&wide, &[1, c_in, h, h]).unwrap(), 2 * one);
    }

    #[test]
    fn depthwise_matches_naive(seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = r.gen_range(1..5);
        let k = [3usize, 5, 7][r.gen_range(0..3)];
        let (h, w) = (r.gen_range(2..9), r.gen_range(2..9));
        let x = uniform(&mut r, &[1, c, h, w], -2.0, 2.0);
        let spec = ConvSpec::new(
            ConvGeometry::same(k, c),
            uniform(&mut r, &[c, 1, k, k], -1.0, 1.0),
            None,
        ).unwrap();
        let d = conv2d(&x, &spec).unwrap().max_abs_diff(&conv2d_naive(&x, &spec).unwrap()).unwrap();
        prop_assert!(d < 1e-9);
    }
}
