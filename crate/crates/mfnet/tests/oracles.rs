//! Kernel results against independent padded-buffer oracles, plus the
//! structural properties of grouped convolution.

mod common;

use common::{conv2d_oracle, conv3d_oracle, matmul_oracle, pool2d_oracle, TestRng};
use mfnet::tensor::{
    conv2d, conv3d, linear, pool, ConvSpec, PaddingMode, PoolMode, PoolSpec, Tensor,
};
use proptest::prelude::*;

#[test]
fn strided_grouped_conv2d_matches_oracle() {
    // random 2x8x9x9 input, G=4, 3x3 kernel, stride 2, pad 1
    let mut rng = TestRng::new(11);
    let x = rng.tensor(&[2, 8, 9, 9]);
    let w = rng.tensor(&[8, 2, 3, 3]);
    let spec = ConvSpec::new(8, 8, &[3, 3])
        .with_stride(&[2, 2])
        .with_padding(&[1, 1])
        .with_groups(4);
    let got = conv2d(&x, &w, None, &spec).unwrap();
    let want = conv2d_oracle(&x, &w, None, (2, 2), (1, 1), 4);
    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn grouped_conv3d_matches_oracle() {
    // random 1x4x5x6x6 input, G=2, 3x3x3 kernel
    let mut rng = TestRng::new(12);
    let x = rng.tensor(&[1, 4, 5, 6, 6]);
    let w = rng.tensor(&[4, 2, 3, 3, 3]);
    let spec = ConvSpec::new(4, 4, &[3, 3, 3])
        .with_padding(&[1, 1, 1])
        .with_groups(2);
    let got = conv3d(&x, &w, None, &spec).unwrap();
    let want = conv3d_oracle(&x, &w, None, (1, 1, 1), (1, 1, 1), 2, PaddingMode::Zeros);
    assert!(got.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn replicate_temporal_padding_matches_oracle() {
    let mut rng = TestRng::new(13);
    let x = rng.tensor(&[2, 2, 4, 5, 5]);
    let w = rng.tensor(&[2, 2, 3, 3, 3]);
    let spec = ConvSpec::new(2, 2, &[3, 3, 3])
        .with_padding(&[1, 1, 1])
        .with_padding_mode(PaddingMode::Replicate);
    let got = conv3d(&x, &w, None, &spec).unwrap();
    let want = conv3d_oracle(&x, &w, None, (1, 1, 1), (1, 1, 1), 1, PaddingMode::Replicate);
    assert!(got.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn padded_max_pool_matches_oracle() {
    // random 1x2x6x6, max, window 3 stride 2 pad 1
    let mut rng = TestRng::new(14);
    let x = rng.tensor(&[1, 2, 6, 6]);
    let spec = PoolSpec::new(PoolMode::Max, &[3, 3], &[2, 2], &[1, 1]);
    let got = pool(&x, &spec).unwrap();
    let want = pool2d_oracle(&x, PoolMode::Max, (3, 3), (2, 2), (1, 1));
    assert_eq!(got.data(), want.data());
}

#[test]
fn linear_matches_triple_loop_matmul() {
    // random 3x7 by 5x7
    let mut rng = TestRng::new(15);
    let x = rng.tensor(&[3, 7]);
    let w = rng.tensor(&[5, 7]);
    let b = rng.tensor(&[5]);
    let got = linear(&x, &w, Some(&b)).unwrap();
    let want = matmul_oracle(&x, &w, Some(b.data()));
    assert!(got.max_abs_diff(&want) <= 1e-13);
}

#[test]
fn relu_conv_composition_gradient_is_checkable() {
    // f(x) = sum(relu(conv2d(x, w))^2), checked by central differences.
    let mut rng = TestRng::new(16);
    let x = rng.tensor(&[1, 2, 5, 5]);
    let w = rng.tensor(&[3, 2, 3, 3]);
    let spec = ConvSpec::new(2, 3, &[3, 3]).with_padding(&[1, 1]);

    let f = |t: &Tensor<f64>| -> mfnet::Result<Tensor<f64>> {
        let y = conv2d(t, &w, None, &spec)?.relu();
        Ok(Tensor::scalar(y.data().iter().map(|v| v * v).sum()))
    };
    // analytic: d/dx = conv_backward with grad 2*relu(y)*[y>0]
    let y = conv2d(&x, &w, None, &spec).unwrap();
    let grad_y = y.map(|v| if v > 0.0 { 2.0 * v } else { 0.0 });
    let grads = mfnet::tensor::conv_backward(&x, &w, &spec, &grad_y, false).unwrap();
    let err = mfnet::tensor::finite_difference_check(f, &x, &grads.input, 1e-4).unwrap();
    assert!(err <= 1e-5, "relative error {err}");
}

#[test]
fn determinism_two_runs_bitwise_identical() {
    let mut rng = TestRng::new(17);
    let x = rng.tensor(&[2, 4, 7, 7]);
    let w = rng.tensor(&[4, 2, 3, 3]);
    let spec = ConvSpec::new(4, 4, &[3, 3]).with_padding(&[1, 1]).with_groups(2);
    let a = conv2d(&x, &w, None, &spec).unwrap();
    let b = conv2d(&x, &w, None, &spec).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Zeroing the input channels of group g changes only the output
    /// channels of group g.
    #[test]
    fn group_locality(seed in 0u64..1000, groups in prop::sample::select(vec![1usize, 2, 4])) {
        let mut rng = TestRng::new(seed);
        let (c, o) = (groups * 2, groups * 3);
        let x = rng.tensor(&[1, c, 5, 5]);
        let w = rng.tensor(&[o, 2, 3, 3]);
        let spec = ConvSpec::new(c, o, &[3, 3]).with_padding(&[1, 1]).with_groups(groups);
        let base = conv2d(&x, &w, None, &spec).unwrap();

        let target = (seed as usize) % groups;
        let mut zeroed = x.clone();
        for ch in target * 2..(target + 1) * 2 {
            for i in 0..25 {
                zeroed.data_mut()[ch * 25 + i] = 0.0;
            }
        }
        let out = conv2d(&zeroed, &w, None, &spec).unwrap();
        let og = o / groups;
        for ch in 0..o {
            let changed = (0..25).any(|i| out.data()[ch * 25 + i] != base.data()[ch * 25 + i]);
            if ch / og != target {
                prop_assert!(!changed, "channel {ch} outside group {target} changed");
            }
        }
    }

    /// conv(a*x + b*y) == a*conv(x) + b*conv(y) for fixed weights.
    #[test]
    fn conv_is_linear_in_its_input(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = TestRng::new(seed);
        let x = rng.tensor(&[1, 2, 5, 5]);
        let y = rng.tensor(&[1, 2, 5, 5]);
        let w = rng.tensor(&[3, 2, 3, 3]);
        let spec = ConvSpec::new(2, 3, &[3, 3]).with_padding(&[1, 1]);

        let mut mix = x.scale(a);
        mix.add_scaled(&y, b);
        let lhs = conv2d(&mix, &w, None, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, None, &spec).unwrap().scale(a);
        rhs.add_scaled(&conv2d(&y, &w, None, &spec).unwrap(), b);

        let scale = lhs.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * scale);
    }

    /// Tensor round-trip through the byte payload is bitwise.
    #[test]
    fn record_payload_round_trip(seed in 0u64..10_000) {
        let mut rng = TestRng::new(seed);
        let shape = [rng.range(1, 4), rng.range(1, 5), rng.range(1, 6)];
        let t = rng.tensor(&shape);
        let rec = mfnet::io::TensorRecord::from_tensor("t", &t);
        let back = rec.to_tensor::<f64>().unwrap();
        prop_assert_eq!(t.data(), back.data());
    }
}
