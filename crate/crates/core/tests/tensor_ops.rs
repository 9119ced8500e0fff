use nrx_core::tensor::{
    invert_permutation, shuffle_permutation, Activation, Tape, Tensor, TensorError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn conv(x: Tensor<f64>, w: Tensor<f64>, dilation: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let c_out = w.shape()[3];
    let xv = tape.leaf(x, false);
    let wv = tape.leaf(w, false);
    let bv = tape.leaf(Tensor::zeros(&[c_out]), false);
    let y = tape.conv2d(xv, wv, bv, dilation).unwrap();
    tape.value(y).clone()
}

fn delta(h: usize, w: usize, at: (usize, usize)) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[1, h, w, 1]);
    t.data_mut()[at.0 * w + at.1] = 1.0;
    t
}

#[test]
fn pointwise_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[2, 3, 4, 5], &mut rng);
    let mut w = Tensor::zeros(&[1, 1, 5, 5]);
    for c in 0..5 {
        w.data_mut()[c * 5 + c] = 1.0;
    }
    assert_eq!(conv(x.clone(), w, 1), x);
}

#[test]
fn ones_kernel_impulse_response() {
    let y = conv(delta(5, 5, (2, 2)), Tensor::full(&[3, 3, 1, 1], 1.0), 1);
    for r in 0..5 {
        for c in 0..5 {
            let expect = if (1..=3).contains(&r) && (1..=3).contains(&c) {
                1.0
            } else {
                0.0
            };
            assert_eq!(y.data()[r * 5 + c], expect, "at ({r},{c})");
        }
    }
}

#[test]
fn dilated_taps_land_three_apart() {
    // K=3, D=3 gives an effective 7x7 footprint with taps at -3, 0, +3
    let y = conv(delta(9, 9, (4, 4)), Tensor::full(&[3, 3, 1, 1], 1.0), 3);
    for r in 0..9 {
        for c in 0..9 {
            let on = [1, 4, 7].contains(&r) && [1, 4, 7].contains(&c);
            assert_eq!(
                y.data()[r * 9 + c],
                if on { 1.0 } else { 0.0 },
                "at ({r},{c})"
            );
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 4, 4, 3]), false);
    let w = tape.leaf(Tensor::zeros(&[3, 3, 2, 4]), false);
    let b = tape.leaf(Tensor::zeros(&[4]), false);
    let err = tape.conv2d(x, w, b, 1).unwrap_err();
    assert!(matches!(err, TensorError::Shape { .. }), "{err}");
    assert!(err.to_string().contains("3 channels"));
    let w_even = tape.leaf(Tensor::zeros(&[2, 2, 3, 4]), false);
    assert!(tape.conv2d(x, w_even, b, 1).is_err());
    let w_ok = tape.leaf(Tensor::zeros(&[3, 3, 3, 4]), false);
    assert!(tape.conv2d(x, w_ok, b, 0).is_err());
}

struct DsParams {
    dw: Tensor<f64>,
    dwb: Tensor<f64>,
    pw: Tensor<f64>,
    pwb: Tensor<f64>,
}

fn ds_forward(x: &Tensor<f64>, p: &DsParams, dilation: usize) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), false);
    let v: Vec<_> = [&p.dw, &p.dwb, &p.pw, &p.pwb]
        .into_iter()
        .map(|t| tape.leaf(t.clone(), false))
        .collect();
    let y = tape
        .depthwise_separable_conv2d(xv, v[0], v[1], v[2], v[3], dilation)
        .unwrap();
    tape.value(y).clone()
}

#[test]
fn separable_conv_identity_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[1, 4, 5, 3], &mut rng);
    let mut dw = Tensor::zeros(&[3, 3, 3, 1]);
    for c in 0..3 {
        dw.data_mut()[(3 + 1) * 3 + c] = 1.0; // centre tap
    }
    let mut pw = Tensor::zeros(&[1, 1, 3, 3]);
    for c in 0..3 {
        pw.data_mut()[c * 3 + c] = 1.0;
    }
    let p = DsParams {
        dw,
        dwb: Tensor::zeros(&[3]),
        pw,
        pwb: Tensor::zeros(&[3]),
    };
    assert_eq!(ds_forward(&x, &p, 1), x);
}

#[test]
fn separable_conv_parameter_count_at_c128() {
    let (c_in, c_out, k, dm) = (128usize, 128usize, 3usize, 1usize);
    let count = k * k * c_in * dm + c_in * dm + c_in * dm * c_out + c_out;
    assert_eq!(count, 17_792);
}

/// Dense kernel equal to depthwise followed by pointwise.
fn compose_dense(p: &DsParams) -> (Tensor<f64>, Tensor<f64>) {
    let [k, _, c_in, dm] = p.dw.shape().try_into().unwrap();
    let c_out = p.pw.shape()[3];
    let mut w = Tensor::zeros(&[k, k, c_in, c_out]);
    for t in 0..k * k {
        for ci in 0..c_in {
            for m in 0..dm {
                let j = ci * dm + m;
                let dwv = p.dw.data()[(t * c_in + ci) * dm + m];
                for co in 0..c_out {
                    w.data_mut()[(t * c_in + ci) * c_out + co] += dwv * p.pw.data()[j * c_out + co];
                }
            }
        }
    }
    let mut b = p.pwb.clone();
    for j in 0..c_in * dm {
        for co in 0..c_out {
            b.data_mut()[co] += p.dwb.data()[j] * p.pw.data()[j * c_out + co];
        }
    }
    (w, b)
}

#[test]
fn separable_conv_equals_composed_dense_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (c_in, dm, c_out, dil) in [(3, 1, 4, 1), (4, 2, 3, 2), (6, 3, 5, 1), (2, 1, 2, 3)] {
        let x = random(&[2, 6, 7, c_in], &mut rng);
        let p = DsParams {
            dw: random(&[3, 3, c_in, dm], &mut rng),
            dwb: random(&[c_in * dm], &mut rng),
            pw: random(&[1, 1, c_in * dm, c_out], &mut rng),
            pwb: random(&[c_out], &mut rng),
        };
        let got = ds_forward(&x, &p, dil);
        let (w, b) = compose_dense(&p);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.leaf(x, false),
            tape.leaf(w, false),
            tape.leaf(b, false),
        );
        let y = tape.conv2d(xv, wv, bv, dil).unwrap();
        assert!(got.max_abs_diff(tape.value(y)) <= 1e-10);
    }
}

fn layer_norm(x: Tensor<f64>, eps: f64) -> Tensor<f64> {
    let c = x.channels();
    let mut tape = Tape::new();
    let xv = tape.leaf(x, false);
    let g = tape.leaf(Tensor::full(&[c], 1.0), false);
    let b = tape.leaf(Tensor::zeros(&[c]), false);
    let y = tape.layer_norm(xv, g, b, eps).unwrap();
    tape.value(y).clone()
}

#[test]
fn layer_norm_constant_input_is_zero() {
    let y = layer_norm(Tensor::full(&[1, 2, 2, 4], 3.5), 1e-5);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_symmetric_pair() {
    let x = Tensor::from_vec(&[1, 1, 1, 2], vec![-1.0, 1.0]).unwrap();
    let y = layer_norm(x, 1e-5);
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((y.data()[0] + scale).abs() < 1e-15);
    assert!((y.data()[1] - scale).abs() < 1e-15);
}

#[test]
fn layer_norm_output_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::uniform(&[3, 4, 5, 16], 5.0, &mut rng);
    let y = layer_norm(x, 1e-5);
    for px in y.data().chunks(16) {
        let mean = px.iter().sum::<f64>() / 16.0;
        let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn layer_norm_rejects_bad_eps() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 1, 2]), false);
    let g = tape.leaf(Tensor::zeros(&[2]), false);
    assert!(tape.layer_norm(x, g, g, 0.0).is_err());
}

#[test]
fn activation_reference_values() {
    assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
    assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);
    assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))) at x = -0.5
    let u = (2.0 / std::f64::consts::PI).sqrt() * (-0.5 + 0.044715 * -0.125);
    let expect = 0.5 * -0.5 * (1.0 + u.tanh());
    let got = Activation::Gelu.apply(-0.5f64);
    assert!((got - expect).abs() < 1e-15);
    assert!((got - -0.15428).abs() < 1e-5, "{got}");
    assert!((Activation::Gelu.apply(10.0f64) - 10.0).abs() < 1e-6);
}

fn labelled(c: usize) -> Tensor<f64> {
    Tensor::from_vec(&[1, 1, 1, c], (0..c).map(|i| i as f64).collect()).unwrap()
}

#[test]
fn split_concat_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(labelled(4), false);
    let (a, b) = tape.channel_split(x, 2).unwrap();
    assert_eq!(tape.value(a).data(), [0.0, 1.0]);
    assert_eq!(tape.value(b).data(), [2.0, 3.0]);
    let c = tape.channel_concat(a, b).unwrap();
    assert_eq!(tape.value(c).data(), [0.0, 1.0, 2.0, 3.0]);

    assert!(tape.channel_split(x, 0).is_err());
    assert!(tape.channel_split(x, 4).is_err());

    let empty = tape.leaf(Tensor::zeros(&[1, 1, 1, 0]), false);
    let same = tape.channel_concat(x, empty).unwrap();
    assert_eq!(tape.value(same), tape.value(x));

    let wide = tape.leaf(Tensor::zeros(&[2, 3, 4, 128]), false);
    let (l, r) = tape.channel_split(wide, 64).unwrap();
    assert_eq!(tape.value(l).shape(), [2, 3, 4, 64]);
    assert_eq!(tape.value(r).shape(), [2, 3, 4, 64]);
    let back = tape.channel_concat(l, r).unwrap();
    assert_eq!(tape.value(back).shape(), [2, 3, 4, 128]);

    let other = tape.leaf(Tensor::zeros(&[2, 3, 5, 64]), false);
    assert!(tape.channel_concat(l, other).is_err());
}

#[test]
fn shuffle_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(labelled(4), false);
    let s = tape.channel_shuffle(x, 2).unwrap();
    assert_eq!(tape.value(s).data(), [0.0, 2.0, 1.0, 3.0]);
    let x8 = tape.leaf(labelled(8), false);
    let s8 = tape.channel_shuffle(x8, 4).unwrap();
    assert_eq!(
        tape.value(s8).data(),
        [0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]
    );
    assert!(tape.channel_shuffle(x8, 3).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::full(&[1, 2, 3, 2], 0.7), true);
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_through_dead_relu_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::full(&[1, 2, 2, 3], -0.3), true);
    let r = tape.activation(Activation::Relu, x).unwrap();
    let s = tape.sum(r).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::<f64>::full(&[1, 1, 1, 2], 1.0), true);
    let y = tape.activation(Activation::Gelu, x).unwrap();
    assert!(matches!(
        tape.backward(y),
        Err(TensorError::NonScalarLoss(_))
    ));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s).unwrap_err(), TensorError::TapeConsumed);
    assert_eq!(tape.sum(y).unwrap_err(), TensorError::TapeConsumed);
    tape.reset();
    assert!(tape.is_empty());
}

fn bce(p: &[f64], t: &[f64], mask: &[bool]) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let pv = tape.leaf(Tensor::from_vec(&[p.len()], p.to_vec()).unwrap(), false);
    let l = tape.bce_loss(pv, t, mask)?;
    Ok(tape.value(l).item().unwrap())
}

#[test]
fn bce_examples() {
    let loss = bce(&[0.5; 6], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0], &[true; 6]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    let exact = bce(&[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0], &[true; 3]).unwrap();
    assert!(exact <= 1e-6);
    let single = bce(&[0.9], &[1.0], &[true]).unwrap();
    assert!((single - 0.105_360_515_657_826_3).abs() < 1e-12);
    // masked-out entries do not contribute
    let masked = bce(&[0.9, 0.01], &[1.0, 1.0], &[true, false]).unwrap();
    assert!((masked - single).abs() < 1e-15);
    assert_eq!(
        bce(&[0.3], &[1.0], &[false]).unwrap_err(),
        TensorError::EmptyMask
    );
}

#[test]
fn forward_ops_are_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 4, 4, 6], &mut rng);
    let w = random(&[3, 3, 6, 6], &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let wv = tape.leaf(w.clone(), false);
        let bv = tape.leaf(Tensor::zeros(&[6]), false);
        let y = tape.conv2d(xv, wv, bv, 2).unwrap();
        let y = tape.activation(Activation::Gelu, y).unwrap();
        let y = tape.channel_shuffle(y, 3).unwrap();
        tape.value(y).clone()
    };
    let a = run();
    let b = run();
    assert_eq!(a.data(), b.data());
    assert!(a.all_finite());
}

proptest! {
    #[test]
    fn shuffle_is_a_bijection_with_exact_inverse(groups_exp in 0u32..4, per_group in 1usize..5, seed: u64) {
        let groups = 1usize << groups_exp;
        let c = groups * per_group;
        let perm = shuffle_permutation(c, groups).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..c).collect::<Vec<_>>());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, c], (0..4 * c).map(|_| rng.random()).collect()).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let s = tape.channel_permute(xv, perm.clone()).unwrap();
        let back = tape.channel_permute(s, invert_permutation(&perm)).unwrap();
        prop_assert_eq!(tape.value(back), &x);
    }

    #[test]
    fn concat_of_split_is_identity(c in 2usize..12, cut_frac in 0.0f64..1.0, seed: u64) {
        let cut = 1 + ((c - 1) as f64 * cut_frac) as usize % (c - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform(&[2, 3, 2, c], 10.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let (a, b) = tape.channel_split(xv, cut).unwrap();
        let y = tape.channel_concat(a, b).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }
}
