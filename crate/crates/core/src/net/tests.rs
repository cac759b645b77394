use proptest::prelude::*;

use super::*;
use crate::metadata::MetadataVector;
use crate::RandomSource;

fn random_tensor(shape: &[usize], rng: &mut RandomSource) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn assert_close_grad(analytic: f64, numeric: f64, what: &str) {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        diff <= 1e-4 * scale || diff <= 1e-9,
        "{what}: analytic {analytic} vs numeric {numeric}"
    );
}

/// Central differences of `f` with respect to every element of `x`.
fn numeric_gradient(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let eps = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            (f(&plus) - f(&minus)) / (2.0 * eps)
        })
        .collect()
}

fn weighted_sum(t: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    t.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(&[n, o, h, wd]);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let sy = y as isize + i as isize - pad;
                                let sx = xx as isize + j as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + sy as usize) * wd + sx as usize];
                                acc += xv * w.data()[((oi * c + ci) * k + i) * k + j];
                            }
                        }
                    }
                    out.data_mut()[((ni * o + oi) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn elu_values() {
    assert_eq!(elu_scalar(0.0f64), 0.0);
    assert_eq!(elu_scalar(1.0f64), 1.0);
    assert!((elu_scalar(-1.0f64) - (-0.63212)).abs() < 1e-5);
    assert!((elu_scalar(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
}

#[test]
fn unit_kernel_is_identity() {
    let mut rng = RandomSource::new(1);
    let x = random_tensor(&[2, 1, 4, 5], &mut rng);
    let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let b = Tensor::zeros(&[1]);
    assert_eq!(conv2d(&x, &w, &b).unwrap(), x);
}

#[test]
fn ones_kernel_sums_window() {
    let x = Tensor::from_fn(&[1, 1, 5, 5], |_| 1.0f64);
    let w = Tensor::from_fn(&[1, 1, 3, 3], |_| 1.0);
    let out = conv2d(&x, &w, &Tensor::zeros(&[1])).unwrap();
    assert_eq!(out.data()[2 * 5 + 2], 9.0);
    assert_eq!(out.data()[0], 4.0);
    assert_eq!(out.data()[2], 6.0);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::zeros(&[3, 1, 3, 3]);
    assert!(conv2d(&x, &w, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn conv_matches_direct_oracle() {
    let mut rng = RandomSource::new(2);
    for (n, c, o, h, w, k) in [(1, 1, 2, 5, 7, 3), (2, 3, 4, 6, 4, 3), (1, 2, 1, 3, 3, 5), (1, 2, 3, 1, 6, 3)] {
        let x = random_tensor(&[n, c, h, w], &mut rng);
        let wt = random_tensor(&[o, c, k, k], &mut rng);
        let b = random_tensor(&[o], &mut rng);
        let fast = conv2d(&x, &wt, &b).unwrap();
        let slow = naive_conv(&x, &wt, &b);
        for (a, e) in fast.data().iter().zip(slow.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = RandomSource::new(3);
    let x = random_tensor(&[2, 2, 4, 5], &mut rng);
    let w = random_tensor(&[3, 2, 3, 3], &mut rng);
    let b = random_tensor(&[3], &mut rng);
    let probe = random_tensor(&[2, 3, 4, 5], &mut rng);
    let (dx, dw, db) = conv2d_backward(&x, &w, &b, &probe).unwrap();

    let nx = numeric_gradient(&x, |x| weighted_sum(&conv2d(x, &w, &b).unwrap(), &probe));
    let nw = numeric_gradient(&w, |w| weighted_sum(&conv2d(&x, w, &b).unwrap(), &probe));
    let nb = numeric_gradient(&b, |b| weighted_sum(&conv2d(&x, &w, b).unwrap(), &probe));
    for (a, n) in dx.data().iter().zip(&nx) {
        assert_close_grad(*a, *n, "conv dx");
    }
    for (a, n) in dw.data().iter().zip(&nw) {
        assert_close_grad(*a, *n, "conv dw");
    }
    for (a, n) in db.data().iter().zip(&nb) {
        assert_close_grad(*a, *n, "conv db");
    }
}

#[test]
fn maxpool_small_cases() {
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let (out, _) = maxpool2d(&x).unwrap();
    assert_eq!(out.data(), &[4.0]);

    let flat = Tensor::from_fn(&[1, 1, 4, 4], |_| 7.0f64);
    let (out, argmax) = maxpool2d(&flat).unwrap();
    assert!(out.data().iter().all(|&v| v == 7.0));
    let grad = maxpool2d_backward(flat.shape(), &argmax, &Tensor::from_fn(&[1, 1, 2, 2], |_| 1.0));
    let expected: Vec<f64> = (0..16)
        .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    assert_eq!(grad.data(), expected.as_slice());
}

#[test]
fn maxpool_matches_brute_force_and_drops_odd_edges() {
    let mut rng = RandomSource::new(4);
    let x = random_tensor(&[2, 3, 5, 7], &mut rng);
    let (out, _) = maxpool2d(&x).unwrap();
    assert_eq!(out.shape(), &[2, 3, 2, 3]);
    for p in 0..6 {
        for y in 0..2 {
            for xx in 0..3 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data()[p * 35 + (2 * y + dy) * 7 + 2 * xx + dx]);
                    }
                }
                assert_eq!(out.data()[p * 6 + y * 3 + xx], best);
            }
        }
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    let mut rng = RandomSource::new(5);
    let x = random_tensor(&[1, 2, 4, 6], &mut rng);
    let probe = random_tensor(&[1, 2, 2, 3], &mut rng);
    let (_, argmax) = maxpool2d(&x).unwrap();
    let dx = maxpool2d_backward(x.shape(), &argmax, &probe);
    let nx = numeric_gradient(&x, |x| weighted_sum(&maxpool2d(x).unwrap().0, &probe));
    for (a, n) in dx.data().iter().zip(&nx) {
        assert_close_grad(*a, *n, "pool dx");
    }
}

#[test]
fn dense_small_cases() {
    let x = Tensor::from_vec(&[1, 3], vec![1.0f64, -2.0, 0.5]).unwrap();
    let eye = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());

    let x = Tensor::from_vec(&[1, 1], vec![2.0f64]).unwrap();
    let w = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
    let b = Tensor::from_vec(&[1], vec![1.0]).unwrap();
    assert_eq!(dense(&x, &w, &b).unwrap().data(), &[7.0]);
    assert!(dense(&x, &eye, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = RandomSource::new(6);
    let x = random_tensor(&[3, 5], &mut rng);
    let w = random_tensor(&[4, 5], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let probe = random_tensor(&[3, 4], &mut rng);
    let (dx, dw, db) = dense_backward_batch(&x, &w, &probe).unwrap();
    let nx = numeric_gradient(&x, |x| weighted_sum(&dense(x, &w, &b).unwrap(), &probe));
    let nw = numeric_gradient(&w, |w| weighted_sum(&dense(&x, w, &b).unwrap(), &probe));
    let nb = numeric_gradient(&b, |b| weighted_sum(&dense(&x, &w, b).unwrap(), &probe));
    for (a, n) in dx.data().iter().chain(dw.data()).chain(db.data()).zip(nx.iter().chain(&nw).chain(&nb)) {
        assert_close_grad(*a, *n, "dense");
    }
}

#[test]
fn dropout_identity_cases() {
    let mut rng = RandomSource::new(7);
    let x = random_tensor(&[100], &mut rng);
    assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng), x);
    assert_eq!(dropout(&x, 0.0, Mode::Infer, &mut rng), x);
    assert_eq!(dropout(&x, 0.6, Mode::Infer, &mut rng), x);
}

#[test]
fn dropout_statistics() {
    let mut rng = RandomSource::new(8);
    let n = 1_000_000;
    let x = Tensor::from_fn(&[n], |_| 1.0f64);
    let out = dropout(&x, 0.2, Mode::Train, &mut rng);
    let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((kept - 0.8).abs() < 0.002, "kept {kept}");
    assert!(out.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    let mean = out.data().iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
}

#[test]
fn cross_entropy_values() {
    let (loss, grad) = softmax_cross_entropy(&[0.3f64; 5], 2);
    assert!((loss - 5f64.ln()).abs() < 1e-12);
    assert!((grad[2] - (0.2 - 1.0)).abs() < 1e-12);
    let (loss, grad) = softmax_cross_entropy(&[1000.0f64, 0.0], 0);
    assert!(loss.is_finite() && loss.abs() < 1e-12);
    assert!(grad.iter().all(|g| g.is_finite()));
    let (loss, _) = softmax_cross_entropy(&[1000.0f32, 0.0], 1);
    assert!((loss - 1000.0).abs() < 1e-3);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = RandomSource::new(9);
    for target in 0..4 {
        let logits = random_tensor(&[4], &mut rng);
        let (_, grad) = softmax_cross_entropy(logits.data(), target);
        let numeric = numeric_gradient(&logits, |l| softmax_cross_entropy(l.data(), target).0);
        for (a, n) in grad.iter().zip(&numeric) {
            assert_close_grad(*a, *n, "cross entropy");
        }
    }
}

fn tiny_config(classes: usize) -> NetworkConfig {
    NetworkConfig {
        input_height: 16,
        input_width: 32,
        conv_filters: vec![2, 2, 2, 2],
        metadata_units: 6,
        head_units: 8,
        num_classes: classes,
        ..NetworkConfig::default()
    }
}

fn random_sample(cfg: &NetworkConfig, label: usize, rng: &mut RandomSource) -> Sample<f64> {
    Sample {
        spectrogram: Tensor::from_fn(&[cfg.input_height, cfg.input_width], |_| rng.unit()),
        metadata: MetadataVector(std::array::from_fn(|_| rng.unit())),
        label,
    }
}

#[test]
fn pooling_must_leave_spatial_extent() {
    let cfg = NetworkConfig {
        input_height: 8,
        input_width: 16,
        ..tiny_config(2)
    };
    assert!(matches!(cfg.validate(), Err(crate::Error::Config(_))));
    assert!(tiny_config(2).validate().is_ok());
    assert!(NetworkConfig::new(10).validate().is_ok());
    assert_eq!(NetworkConfig::new(10).flattened_len(), 128 * 5 * 32);
    let bad = NetworkConfig {
        conv_filters: vec![2, 2, 2],
        ..tiny_config(2)
    };
    assert!(bad.validate().is_err());
    let bad = NetworkConfig {
        dropout_head: 1.0,
        ..tiny_config(2)
    };
    assert!(bad.validate().is_err());
}

#[test]
fn network_gradients_match_finite_differences() {
    let cfg = tiny_config(3);
    let mut rng = RandomSource::new(10);
    let params: NetworkParams<f64> = init_params(cfg.clone(), &mut rng).unwrap();
    let sample = random_sample(&cfg, 1, &mut rng);
    let (_, grads) = loss_and_gradients(&params, &sample, Mode::Train, &mut RandomSource::new(77)).unwrap();
    let eps = 1e-5;
    let names = cfg.param_names();
    for (t, grad) in grads.iter().enumerate() {
        for i in 0..grad.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].data_mut()[i] += delta;
                loss(&p, &sample, Mode::Train, &mut RandomSource::new(77)).unwrap()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert_close_grad(grad.data()[i], numeric, &names[t]);
        }
    }
}

#[test]
fn probabilities_sum_to_one() {
    let cfg = tiny_config(4);
    let mut rng = RandomSource::new(11);
    let params: NetworkParams<f64> = init_params(cfg.clone(), &mut rng).unwrap();
    for _ in 0..5 {
        let s = random_sample(&cfg, 0, &mut rng);
        let p = forward(&params, &s.spectrogram, &s.metadata, Mode::Infer, &mut rng).unwrap();
        assert!(p.iter().all(|&v| v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn zero_network_is_uniform() {
    let cfg = tiny_config(5);
    let params = NetworkParams::<f64>::zeros(cfg.clone()).unwrap();
    let spec = Tensor::zeros(&[16, 32]);
    let p = forward(&params, &spec, &MetadataVector([0.0; 7]), Mode::Infer, &mut RandomSource::new(0)).unwrap();
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn train_mode_is_seeded_and_infer_is_deterministic() {
    let cfg = tiny_config(3);
    let params: NetworkParams<f32> = init_params(cfg.clone(), &mut RandomSource::new(12)).unwrap();
    let s = random_sample(&cfg, 0, &mut RandomSource::new(13));
    let spec = s.spectrogram.cast::<f32>();
    let run = |mode, seed| forward(&params, &spec, &s.metadata, mode, &mut RandomSource::new(seed)).unwrap();
    assert_eq!(run(Mode::Train, 5), run(Mode::Train, 5));
    assert_ne!(run(Mode::Train, 5), run(Mode::Train, 6));
    assert_eq!(run(Mode::Infer, 5), run(Mode::Infer, 6));
}

#[test]
fn shape_mismatch_is_reported() {
    let cfg = tiny_config(3);
    let params = NetworkParams::<f64>::zeros(cfg).unwrap();
    let spec = Tensor::zeros(&[16, 31]);
    let r = forward(&params, &spec, &MetadataVector([0.0; 7]), Mode::Infer, &mut RandomSource::new(0));
    assert!(matches!(r, Err(crate::Error::Shape(_))));
}

#[test]
fn class_permutation_permutes_predictions() {
    let cfg = tiny_config(4);
    let mut rng = RandomSource::new(14);
    let params: NetworkParams<f64> = init_params(cfg.clone(), &mut rng).unwrap();
    let perm = [2usize, 0, 3, 1];
    let mut permuted = params.clone();
    let out_w = cfg.param_shapes().len() - 2;
    let cols = cfg.head_units;
    for (new, &old) in perm.iter().enumerate() {
        let w = params.tensors()[out_w].data()[old * cols..(old + 1) * cols].to_vec();
        permuted.tensors_mut()[out_w].data_mut()[new * cols..(new + 1) * cols].copy_from_slice(&w);
        permuted.tensors_mut()[out_w + 1].data_mut()[new] = params.tensors()[out_w + 1].data()[old];
    }
    let s = random_sample(&cfg, 0, &mut rng);
    let p = forward(&params, &s.spectrogram, &s.metadata, Mode::Infer, &mut rng).unwrap();
    let q = forward(&permuted, &s.spectrogram, &s.metadata, Mode::Infer, &mut rng).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((q[new] - p[old]).abs() < 1e-15);
    }
    let a = loss(&params, &Sample { label: 3, ..s.clone() }, Mode::Infer, &mut rng).unwrap();
    let b = loss(&permuted, &Sample { label: 2, ..s }, Mode::Infer, &mut rng).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn nesterov_step_arithmetic() {
    let cfg = tiny_config(2);
    let mut params: NetworkParams<f64> = init_params(cfg, &mut RandomSource::new(15)).unwrap();
    let before = params.clone();
    let zero = params.zero_gradients();
    sgd_nesterov_step(&mut params, &zero, 0.001, 0.9).unwrap();
    assert_eq!(params, before);

    let mut ones = params.zero_gradients();
    ones.iter_mut().for_each(|t| t.fill(1.0));
    params.tensors_mut()[1].fill(1.0);
    sgd_nesterov_step(&mut params, &ones, 0.001, 0.9).unwrap();
    assert!(params.tensors()[1].data().iter().all(|&p| (p - 0.9981).abs() < 1e-12));
    assert!(params.velocity()[1].data().iter().all(|&v| (v + 0.001).abs() < 1e-15));
}

#[test]
fn nesterov_descends_quadratic() {
    let cfg = tiny_config(2);
    let mut params = NetworkParams::<f64>::zeros(cfg).unwrap();
    params.tensors_mut()[1].fill(1.0);
    let mut history = Vec::new();
    for _ in 0..100 {
        let mut g = params.zero_gradients();
        g[1] = params.tensors()[1].clone();
        sgd_nesterov_step(&mut params, &g, 0.001, 0.9).unwrap();
        history.push(params.tensors()[1].data()[0].abs());
    }
    for w in history[1..].windows(2) {
        assert!(w[1] < w[0]);
    }
}

#[test]
fn initialization_contract() {
    let cfg = NetworkConfig::new(10);
    let a: NetworkParams<f32> = init_params(cfg.clone(), &mut RandomSource::new(16)).unwrap();
    let b: NetworkParams<f32> = init_params(cfg.clone(), &mut RandomSource::new(16)).unwrap();
    assert_eq!(a, b);
    for (t, shape) in a.tensors().iter().zip(cfg.param_shapes()) {
        if shape.len() == 1 {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else if t.len() >= 10_000 {
            let fan_in: usize = shape[1..].iter().product();
            let n = t.len() as f64;
            let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let expected = 2.0 / fan_in as f64;
            assert!((var / expected - 1.0).abs() < 0.2, "variance {var} vs {expected}");
        }
    }
    assert!(a.velocity().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn batch_gradient_is_mean_and_thread_independent() {
    let cfg = tiny_config(3);
    let mut rng = RandomSource::new(17);
    let params: NetworkParams<f32> = init_params(cfg.clone(), &mut rng).unwrap();
    let samples: Vec<Sample<f32>> = (0..7)
        .map(|i| {
            let s = random_sample(&cfg, i % 3, &mut rng);
            Sample {
                spectrogram: s.spectrogram.cast(),
                metadata: s.metadata,
                label: s.label,
            }
        })
        .collect();
    let seeds: Vec<u64> = (100..107).collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| batch_gradients(&params, &samples, &seeds, Mode::Train).unwrap())
    };
    let (l1, g1) = run(1);
    let (l3, g3) = run(3);
    assert_eq!(l1, l3);
    assert_eq!(g1, g3);

    let mut mean = params.zero_gradients();
    for (s, &seed) in samples.iter().zip(&seeds) {
        let (l, g) = loss_and_gradients(&params, s, Mode::Train, &mut RandomSource::new(seed)).unwrap();
        assert!(l1.contains(&l));
        for (m, g) in mean.iter_mut().zip(&g) {
            m.add_scaled(g, 1.0 / 7.0);
        }
    }
    for (a, b) in g1.iter().zip(&mean) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + y.abs()));
        }
    }
}

proptest! {
    #[test]
    fn softmax_always_normalized(logits in proptest::collection::vec(-1e4f64..1e4, 1..20)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn elu_is_monotone(a in -50f64..50.0, b in -50f64..50.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(elu_scalar(lo) <= elu_scalar(hi));
        prop_assert!(elu_scalar(a) >= -1.0);
    }
}

