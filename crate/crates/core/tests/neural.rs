#![allow(clippy::needless_range_loop)]

use pdrl_core::neural::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward pass written from scratch with index loops, parameters read
/// through the flat `param_mut` ordering.
fn reference_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    let n_layers = net.layers().len();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut out = vec![0.0; layer.n_out];
        for o in 0..layer.n_out {
            let mut z = layer.biases[o];
            for k in 0..layer.n_in {
                z += layer.weights[o * layer.n_in + k] * act[k];
            }
            out[o] = if i + 1 < n_layers { z.tanh() } else { z };
        }
        act = out;
    }
    act
}

fn reference_log_softmax(z: &[f64], a: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[a] - lse
}

fn numeric_gradient(net: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut probe = net.clone();
    (0..net.n_params())
        .map(|i| {
            let orig = *probe.param_mut(i);
            *probe.param_mut(i) = orig + h;
            let up = f(&probe);
            *probe.param_mut(i) = orig - h;
            let down = f(&probe);
            *probe.param_mut(i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        assert!(rel <= 1e-5, "param {i}: analytic {a} numeric {n}");
    }
}

fn random_net(sizes: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    let mut net = init_mlp(sizes, rng).unwrap();
    for l in net.layers_mut() {
        l.biases.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    net
}

#[test]
fn forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sizes in [vec![4, 64, 64, 1], vec![3, 7, 2], vec![1, 1]] {
        let net = random_net(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = net.forward(&x).unwrap();
        for (a, b) in out.iter().zip(reference_forward(&net, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn value_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for sizes in [vec![4, 16, 16, 1], vec![2, 9, 1], vec![5, 1]] {
        let net = random_net(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = net.backprop_value(&x, 1.0).unwrap().to_vec();
        let numeric = numeric_gradient(&net, |n| reference_forward(n, &x)[0]);
        assert_close(&analytic, &numeric);
    }
}

#[test]
fn log_policy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for sizes in [vec![4, 16, 16, 2], vec![3, 12, 4], vec![2, 3]] {
        let net = random_net(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for a in 0..*sizes.last().unwrap() {
            let analytic = net.backprop_log_policy(&x, a).unwrap().to_vec();
            let numeric = numeric_gradient(&net, |n| reference_log_softmax(&reference_forward(n, &x), a));
            assert_close(&analytic, &numeric);
        }
    }
}

#[test]
fn score_function_has_zero_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = random_net(&[3, 10, 4], &mut rng);
    let x = [0.3, -0.7, 0.1];
    let probs = net.forward_policy(&x).unwrap();
    let mut total = GradientBundle::zeros_like(&net);
    for (a, p) in probs.iter().enumerate() {
        total.add_scaled(&net.backprop_log_policy(&x, a).unwrap(), *p);
    }
    assert!(total.max_abs() < 1e-12);
}

#[test]
fn shifting_output_biases_leaves_policy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_net(&[3, 8, 3], &mut rng);
    let mut shifted = net.clone();
    shifted
        .layers_mut()
        .last_mut()
        .unwrap()
        .biases
        .iter_mut()
        .for_each(|b| *b += 3.7);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = net.forward_policy(&x).unwrap();
        let q = shifted.forward_policy(&x).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn policy_outputs_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let width = rng.gen_range(1..=32);
        let n_actions = rng.gen_range(2..=5);
        let mut net = init_mlp(&[4, width, n_actions], &mut rng).unwrap();
        // large weights to stress the softmax
        for l in net.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w *= 50.0);
        }
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let p = net.forward_policy(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn init_weights_are_centered_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sum = 0.0;
    let mut count = 0usize;
    let bound = 1.0 / 25f64.sqrt();
    while count < 100_000 {
        let net = init_mlp(&[25, 40, 1], &mut rng).unwrap();
        let layer = &net.layers()[0];
        assert!(layer.weights.iter().all(|w| w.abs() <= bound));
        assert!(layer.biases.iter().all(|&b| b == 0.0));
        sum += layer.weights.iter().sum::<f64>();
        count += layer.weights.len();
    }
    let mean = sum / count as f64;
    // sd of U[-b, b] is b / sqrt(3)
    let se = bound / 3f64.sqrt() / (count as f64).sqrt();
    assert!(mean.abs() < 4.0 * se, "mean {mean}, se {se}");
}

#[test]
fn binary_round_trip_through_file() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = random_net(&[4, 6, 5, 2], &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    assert_eq!(Mlp::load(&path).unwrap(), net);
}

#[test]
fn truncated_file_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = random_net(&[2, 3, 1], &mut rng);
    let mut bytes = Vec::new();
    net.write_to(&mut bytes).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(Mlp::read_from(bytes.as_slice()).is_err());
}

proptest! {
    #[test]
    fn sgd_step_moves_by_eta_times_gradient(seed in 0u64..1000, eta in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&[3, 4, 1], &mut rng);
        let grad = net.backprop_value(&[0.1, 0.2, 0.3], 1.0).unwrap();
        let mut moved = net.clone();
        moved.sgd_step(&grad, eta, -1.0).unwrap();
        for ((a, b), g) in moved.params().iter().zip(net.params()).zip(grad.to_vec()) {
            prop_assert!((a - (b - eta * g)).abs() < 1e-14);
        }
    }
}
