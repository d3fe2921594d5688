use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check, GradCheckConfig};
use crate::params::normal_tensor;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    normal_tensor(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tol(tolerance: f64) -> GradCheckConfig {
    GradCheckConfig { tolerance, ..Default::default() }
}

/// `sum(out ⊙ w)` for a fixed random `w`, so every output coordinate gets a
/// distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let w = tape.leaf(rand_t(tape.shape(out), seed));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn assert_passes(report: crate::gradcheck::GradCheckReport) {
    assert!(report.passed(), "{}", report.render());
}

#[test]
fn conv_identity_kernel() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_t(&[2, 1, 5, 4], 1));
    let k = tape.leaf(t(&[1, 1, 1, 1], &[1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv2d(x, k, b, 1, Padding::Same).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn conv_direct_sum() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 2.0));
    let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv2d(x, k, b, 1, Padding::Valid).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[18.0]);
}

#[test]
fn conv_is_cross_correlation() {
    // an asymmetric kernel picks the right-hand neighbour, not the left
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 1, 3], &[1.0, 2.0, 3.0]));
    let k = tape.leaf(t(&[1, 1, 1, 3], &[0.0, 0.0, 1.0]));
    let b = tape.leaf(t(&[1], &[0.0]));
    let y = tape.conv2d(x, k, b, 1, Padding::Same).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0, 0.0]);
}

#[test]
fn stem_halves_full_resolution() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 512, 256]));
    let k = tape.leaf(Tensor::zeros(&[3, 1, 7, 7]));
    let b = tape.leaf(Tensor::zeros(&[3]));
    let y = tape.conv2d(x, k, b, 2, Padding::Same).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 256, 128]);
}

#[test]
fn conv_channel_mismatch_is_diagnosed() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
    let k = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
    let b = tape.leaf(Tensor::zeros(&[1]));
    let err = tape.conv2d(x, k, b, 1, Padding::Same).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { op: "conv2d", .. }), "{err}");
}

#[test]
fn conv_gradients() {
    for (stride, padding, hw) in [(1, Padding::Same, (5, 4)), (2, Padding::Same, (6, 5)), (1, Padding::Valid, (4, 4))] {
        let inputs = vec![
            ("x".to_string(), rand_t(&[2, 2, hw.0, hw.1], 3)),
            ("kernel".to_string(), rand_t(&[3, 2, 3, 3], 4)),
            ("bias".to_string(), rand_t(&[3], 5)),
        ];
        assert_passes(
            check(
                "conv2d",
                &inputs,
                |tape, v| {
                    let y = tape.conv2d(v[0], v[1], v[2], stride, padding)?;
                    project(tape, y, 6)
                },
                &tol(1e-6),
            )
            .unwrap(),
        );
    }
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.maxpool2(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let c = tape.leaf(Tensor::full(&[2, 3, 4, 6], 1.5));
    let y = tape.maxpool2(c).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
}

#[test]
fn maxpool_rejects_odd_spatial() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[1, 1, 3, 4]));
    assert_eq!(tape.maxpool2(x).unwrap_err(), TensorError::OddSpatial { op: "maxpool2", h: 3, w: 4 });
}

#[test]
fn maxpool_tie_routes_to_first_maximum() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 5.0, 5.0, 5.0]));
    let y = tape.maxpool2(x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn maxpool_gradient() {
    let inputs = vec![("x".to_string(), rand_t(&[2, 2, 4, 6], 7))];
    assert_passes(
        check(
            "maxpool2",
            &inputs,
            |tape, v| {
                let y = tape.maxpool2(v[0])?;
                Ok(tape.sum(y))
            },
            &tol(1e-4),
        )
        .unwrap(),
    );
}

fn channel_stats(x: &Tensor<f64>, c: usize) -> (f64, f64) {
    let (b, ch, h, w) = x.dims4("stats").unwrap();
    let vals: Vec<f64> = (0..b)
        .flat_map(|n| (0..h * w).map(move |i| ((n * ch + c) * h * w) + i))
        .map(|i| x.data()[i])
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    (mean, var)
}

#[test]
fn batchnorm_normalizes_in_train_mode() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_t(&[4, 3, 5, 5], 8).map(|v| 3.0 * v + 2.0));
    let g = tape.leaf(Tensor::full(&[3], 1.0));
    let b = tape.leaf(Tensor::zeros(&[3]));
    let mut running = RunningMoments::new(3);
    let y = tape.batchnorm(x, g, b, BatchNormMode::Train(&mut running)).unwrap();
    for c in 0..3 {
        let (mean, var) = channel_stats(tape.value(y), c);
        assert!(mean.abs() < 1e-12);
        // variance is v / (v + eps) for the batch variance v ~ 9
        assert!((var - 1.0).abs() < 1e-5, "channel {c} variance {var}");
    }
    // running moments moved 10% towards the batch statistics
    let (m0, v0) = channel_stats(tape.value(x), 0);
    assert!((running.mean[0] - 0.1 * m0).abs() < 1e-12);
    assert!((running.var[0] - (0.9 + 0.1 * v0)).abs() < 1e-12);
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_t(&[3, 2], 9));
    let g = tape.leaf(Tensor::zeros(&[2]));
    let b = tape.leaf(t(&[2], &[0.5, -1.25]));
    let mut running = RunningMoments::new(2);
    let y = tape.batchnorm(x, g, b, BatchNormMode::Train(&mut running)).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, -1.25, 0.5, -1.25, 0.5, -1.25]);
}

#[test]
fn batchnorm_rejects_single_sample_batches_in_train_mode() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_t(&[1, 2, 3, 3], 10));
    let g = tape.leaf(Tensor::full(&[2], 1.0));
    let b = tape.leaf(Tensor::zeros(&[2]));
    let mut running = RunningMoments::new(2);
    let err = tape.batchnorm(x, g, b, BatchNormMode::Train(&mut running)).unwrap_err();
    assert_eq!(err, TensorError::BatchTooSmall { op: "batchnorm", batch: 1 });
    assert!(tape.batchnorm(x, g, b, BatchNormMode::Infer(&running)).is_ok());
}

#[test]
fn batchnorm_infer_uses_running_moments() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 1, 1, 2], &[3.0, 5.0]));
    let g = tape.leaf(t(&[1], &[2.0]));
    let b = tape.leaf(t(&[1], &[1.0]));
    let running = RunningMoments { mean: vec![1.0], var: vec![4.0 - BN_EPS] };
    let y = tape.batchnorm(x, g, b, BatchNormMode::Infer(&running)).unwrap();
    let got = tape.value(y).data();
    assert!((got[0] - 3.0).abs() < 1e-12 && (got[1] - 5.0).abs() < 1e-12, "{got:?}");
}

#[test]
fn batchnorm_gradients() {
    for shape in [vec![3, 2, 3, 2], vec![5, 3]] {
        let c = shape[1];
        let inputs = vec![
            ("x".to_string(), rand_t(&shape, 11)),
            ("gamma".to_string(), rand_t(&[c], 12)),
            ("beta".to_string(), rand_t(&[c], 13)),
        ];
        for train in [true, false] {
            assert_passes(
                check(
                    "batchnorm",
                    &inputs,
                    |tape, v| {
                        let mut running = RunningMoments { mean: vec![0.3; c], var: vec![1.7; c] };
                        let mode = if train { BatchNormMode::Train(&mut running) } else { BatchNormMode::Infer(&running) };
                        let y = tape.batchnorm(v[0], v[1], v[2], mode)?;
                        project(tape, y, 14)
                    },
                    &tol(1e-4),
                )
                .unwrap(),
            );
        }
    }
}

#[test]
fn activation_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[-3.0, 5.0, 0.0]));
    let r = tape.relu(x);
    assert_eq!(tape.value(r).data(), &[0.0, 5.0, 0.0]);
    let th = tape.tanh(x);
    assert_eq!(tape.value(th).data()[2], 0.0);
    assert!(tape.value(th).data().iter().all(|v| v.abs() < 1.0));

    // relu derivative at exactly zero is zero
    let s = tape.sum(r);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn activation_gradients() {
    let inputs = vec![("x".to_string(), rand_t(&[3, 7], 15))];
    for kind in [Activation::Tanh, Activation::Relu] {
        let tolerance = if kind == Activation::Tanh { 1e-6 } else { 1e-4 };
        assert_passes(
            check(
                "activation",
                &inputs,
                |tape, v| {
                    let y = tape.activation(v[0], kind);
                    project(tape, y, 16)
                },
                &tol(tolerance),
            )
            .unwrap(),
        );
    }
}

#[test]
fn dense_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
    let w = tape.leaf(t(&[1, 2], &[3.0, 4.0]));
    let b = tape.leaf(t(&[1], &[5.0]));
    let y = tape.dense(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[16.0]);

    let x = tape.leaf(rand_t(&[3, 4], 17));
    let eye = tape.leaf(Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
    let zero = tape.leaf(Tensor::zeros(&[4]));
    let y = tape.dense(x, eye, zero).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let bad = tape.leaf(Tensor::zeros(&[2, 3]));
    assert!(tape.dense(x, bad, b).is_err());
}

#[test]
fn dense_gradients() {
    let inputs = vec![
        ("x".to_string(), rand_t(&[3, 4], 18)),
        ("weight".to_string(), rand_t(&[5, 4], 19)),
        ("bias".to_string(), rand_t(&[5], 20)),
    ];
    assert_passes(
        check(
            "dense",
            &inputs,
            |tape, v| {
                let y = tape.dense(v[0], v[1], v[2])?;
                project(tape, y, 21)
            },
            &tol(1e-6),
        )
        .unwrap(),
    );
}

#[test]
fn gap_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 2, 2, 2], &[0.0, 2.0, 4.0, 6.0, 7.0, 7.0, 7.0, 7.0]));
    let y = tape.global_avg_pool(x).unwrap();
    assert_eq!(tape.shape(y), &[1, 2]);
    assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.25));
}

#[test]
fn gap_gradient() {
    let inputs = vec![("x".to_string(), rand_t(&[2, 3, 4, 5], 22))];
    assert_passes(
        check(
            "global_avg_pool",
            &inputs,
            |tape, v| {
                let y = tape.global_avg_pool(v[0])?;
                project(tape, y, 23)
            },
            &tol(1e-6),
        )
        .unwrap(),
    );
}

#[test]
fn concat_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(rand_t(&[2, 2, 3, 3], 24));
    let b = tape.leaf(rand_t(&[2, 3, 3, 3], 25));
    let y = tape.concat_channels(a, b).unwrap();
    assert_eq!(tape.shape(y), &[2, 5, 3, 3]);
    let (yv, av) = (tape.value(y).data(), tape.value(a).data());
    assert_eq!(&yv[..18], &av[..18]);
    assert_eq!(&yv[45..63], &av[18..36]);

    let empty = tape.leaf(Tensor::zeros(&[2, 0, 3, 3]));
    let same = tape.concat_channels(a, empty).unwrap();
    assert_eq!(tape.value(same), tape.value(a));

    let wrong = tape.leaf(Tensor::zeros(&[2, 1, 3, 4]));
    assert!(tape.concat_channels(a, wrong).is_err());
}

#[test]
fn concat_gradient() {
    let inputs = vec![("a".to_string(), rand_t(&[2, 2, 3, 2], 26)), ("b".to_string(), rand_t(&[2, 3, 3, 2], 27))];
    assert_passes(
        check(
            "concat_channels",
            &inputs,
            |tape, v| {
                let y = tape.concat_channels(v[0], v[1])?;
                project(tape, y, 28)
            },
            &tol(1e-6),
        )
        .unwrap(),
    );
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_t(&[2, 3], 29));
    let ones = tape.leaf(Tensor::full(&[2, 3], 1.0));
    let y = tape.mul(x, ones).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let neg = tape.leaf(tape.value(x).map(|v| -v));
    let z = tape.add(x, neg).unwrap();
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    let other = tape.leaf(Tensor::zeros(&[3, 2]));
    assert!(tape.elementwise(x, other, Elementwise::Add).is_err());
}

#[test]
fn elementwise_gradients() {
    let inputs = vec![("a".to_string(), rand_t(&[3, 4], 30)), ("b".to_string(), rand_t(&[3, 4], 31))];
    for kind in [Elementwise::Mul, Elementwise::Add] {
        assert_passes(
            check(
                "elementwise",
                &inputs,
                |tape, v| {
                    let y = tape.elementwise(v[0], v[1], kind)?;
                    project(tape, y, 32)
                },
                &tol(1e-6),
            )
            .unwrap(),
        );
    }
}

#[test]
fn scalar_helpers_gradients() {
    let inputs = vec![("x".to_string(), rand_t(&[3, 4], 33))];
    let target = rand_t(&[3, 4], 34);
    assert_passes(
        check(
            "helpers",
            &inputs,
            |tape, v| {
                let a = tape.add_scalar(v[0], 0.5);
                let s = tape.scale(a, -1.5);
                let m = tape.mean_abs_diff(s, &target)?;
                let n = tape.l2_norm(v[0]);
                let q = tape.squared_norm(v[0]);
                let mn = tape.add(m, n)?;
                tape.add(mn, q)
            },
            &tol(1e-6),
        )
        .unwrap(),
    );
}

#[test]
fn backward_basics() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let sq = tape.mul(x, x).unwrap();
    let s2 = tape.sum(sq);
    let g2 = tape.backward(s2).unwrap();
    assert_eq!(g2.get(x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);

    assert_eq!(tape.backward(sq).err(), Some(TensorError::NonScalar { shape: vec![2, 2] }));
}

#[test]
fn repeated_use_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1.0, 2.0]));
    let a = tape.add(x, x).unwrap();
    let b = tape.add(a, x).unwrap();
    let s = tape.sum(b);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_t(&[2, 2, 8, 6], 35));
        let k = tape.leaf(rand_t(&[3, 2, 3, 3], 36));
        let b = tape.leaf(rand_t(&[3], 37));
        let y = tape.conv2d(x, k, b, 1, Padding::Same).unwrap();
        let p = tape.maxpool2(y).unwrap();
        let r = tape.tanh(p);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        (tape.value(r).clone(), g.get(k).unwrap().clone())
    };
    assert_eq!(run(), run());
}

fn conv_value(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let kv = tape.leaf(k.clone());
    let bv = tape.leaf(Tensor::zeros(&[k.shape()[0]]));
    let y = tape.conv2d(xv, kv, bv, stride, padding).unwrap();
    tape.value(y).clone()
}

/// Direct convolution with explicit padding, plus the input gradient of
/// `sum(out ⊙ w)`.
fn direct_conv(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    stride: usize,
    (pt, pl): (usize, usize),
    (oh, ow): (usize, usize),
    w: &Tensor<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let [b, c, h, wd] = x.shape()[..] else { unreachable!() };
    let [f, _, kh, kw] = k.shape()[..] else { unreachable!() };
    let mut out = vec![0.0; b * f * oh * ow];
    let mut dx = vec![0.0; x.numel()];
    for n in 0..b {
        for o in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let at = ((n * f + o) * oh + oy) * ow + ox;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pt as isize;
                                let ix = (ox * stride + j) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((n * c + ci) * h + iy as usize) * wd + ix as usize;
                                let kv = k.data()[((o * c + ci) * kh + i) * kw + j];
                                out[at] += kv * x.data()[xi];
                                dx[xi] += kv * w.data()[at];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, dx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_loops(
        seed in any::<u64>(),
        kh in 1usize..6,
        kw in 1usize..6,
        h in 5usize..10,
        w in 5usize..10,
        stride in 1usize..4,
        same in any::<bool>(),
    ) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = rand_t(&[2, 2, h, w], seed);
        let k = rand_t(&[3, 2, kh, kw], seed.wrapping_add(1));
        let bias = Tensor::zeros(&[3]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.leaf(x.clone()), tape.leaf(k.clone()), tape.leaf(bias));
        let y = tape.conv2d(xv, kv, bv, stride, padding).unwrap();
        let shape = tape.shape(y).to_vec();
        let wt = rand_t(&shape, seed.wrapping_add(2));
        let wv = tape.leaf(wt.clone());
        let p = tape.mul(y, wv).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        let pad = if same { ((kh - 1) / 2, (kw - 1) / 2) } else { (0, 0) };
        let (out, dx) = direct_conv(&x, &k, stride, pad, (shape[2], shape[3]), &wt);
        let got = tape.value(y).data();
        prop_assert!(got.iter().zip(&out).all(|(a, b)| (a - b).abs() < 1e-12));
        let gx = grads.get(xv).unwrap().data();
        prop_assert!(gx.iter().zip(&dx).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_is_linear_in_its_input(
        seed in any::<u64>(),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
        stride in 1usize..3,
        same in any::<bool>(),
    ) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = rand_t(&[2, 2, 6, 5], seed);
        let y = rand_t(&[2, 2, 6, 5], seed.wrapping_add(1));
        let k = rand_t(&[3, 2, 3, 3], seed.wrapping_add(2));
        let combo = Tensor::new(
            vec![2, 2, 6, 5],
            x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        let lhs = conv_value(&combo, &k, stride, padding);
        let (cx, cy) = (conv_value(&x, &k, stride, padding), conv_value(&y, &k, stride, padding));
        let rhs = Tensor::new(
            lhs.shape().to_vec(),
            cx.data().iter().zip(cy.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn shape_algebra_matches_observed_shapes(
        b in 1usize..3,
        c in 1usize..4,
        f in 1usize..4,
        h in 1usize..6,
        w in 1usize..6,
        k in 1usize..4,
        stride in 1usize..3,
        same in any::<bool>(),
    ) {
        let (h, w) = (2 * h, 2 * w);
        let padding = if same { Padding::Same } else { Padding::Valid };
        prop_assume!(same || (k <= h && k <= w));
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[b, c, h, w]));
        let kv = tape.leaf(Tensor::zeros(&[f, c, k, k]));
        let bv = tape.leaf(Tensor::zeros(&[f]));
        let y = tape.conv2d(x, kv, bv, stride, padding).unwrap();
        let pad = if same { k - 1 } else { 0 };
        let expect = |n: usize| (n + pad - k) / stride + 1;
        prop_assert_eq!(tape.shape(y), &[b, f, expect(h), expect(w)][..]);

        let p = tape.maxpool2(x).unwrap();
        prop_assert_eq!(tape.shape(p), &[b, c, h / 2, w / 2][..]);
        let g = tape.global_avg_pool(x).unwrap();
        prop_assert_eq!(tape.shape(g), &[b, c][..]);
        let cat = tape.concat_channels(x, y);
        if tape.shape(y)[2..] == [h, w] {
            prop_assert_eq!(tape.shape(cat.unwrap()), &[b, c + f, h, w][..]);
        } else {
            prop_assert!(cat.is_err());
        }
    }
}
