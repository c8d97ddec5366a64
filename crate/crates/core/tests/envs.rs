use pdrl_core::envs::*;
use pdrl_core::mdp::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent transcription of the cart-pole Euler update.
fn reference_step(s: [f64; 4], action: usize) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = s;
    let force = if action == 1 { 10.0 } else { -10.0 };
    let (masspole, total_mass, length) = (0.1, 1.1, 0.5);
    let polemass_length = masspole * length;
    let temp = (force + polemass_length * theta_dot * theta_dot * theta.sin()) / total_mass;
    let thetaacc = (9.8 * theta.sin() - theta.cos() * temp)
        / (length * (4.0 / 3.0 - masspole * theta.cos() * theta.cos() / total_mass));
    let xacc = temp - polemass_length * thetaacc * theta.cos() / total_mass;
    [
        x + 0.02 * x_dot,
        x_dot + 0.02 * xacc,
        theta + 0.02 * theta_dot,
        theta_dot + 0.02 * thetaacc,
    ]
}

#[test]
fn trajectory_matches_reference_integrator() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let mut state = cartpole_reset(&mut rng);
        let mut reference = [state.x, state.x_dot, state.theta, state.theta_dot];
        loop {
            let action = rng.gen_range(0..2);
            let (next, step) = cartpole_step(&state, action).unwrap();
            reference = reference_step(reference, action);
            for (a, b) in step.observation.iter().zip(reference) {
                assert!((a - b).abs() <= 1e-12);
            }
            let out_of_bounds =
                reference[0].abs() > 2.4 || reference[2].abs() > 12.0 * 2.0 * std::f64::consts::PI / 360.0;
            assert_eq!(step.terminal, out_of_bounds || next.t >= 200);
            if step.terminal {
                break;
            }
            state = next;
        }
    }
}

#[test]
fn reset_components_are_centered() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let mut sums = [0.0; 4];
    for _ in 0..n {
        for (sum, v) in sums.iter_mut().zip(cartpole_reset(&mut rng).observation()) {
            *sum += v;
        }
    }
    // sd of U[-0.05, 0.05] is 0.05 / sqrt(3)
    let se = 0.05 / 3f64.sqrt() / (n as f64).sqrt();
    for sum in sums {
        assert!((sum / n as f64).abs() < 4.0 * se);
    }
}

#[test]
fn tabular_adapter_matches_exact_return() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mdp = TabularMdp::random(4, 2, 0.8, &mut rng);
    let policy = TabularPolicy {
        probs: (0..4).map(|_| random_simplex(2, &mut rng)).collect(),
    };
    let exact = mdp.evaluate_policy_return(&policy).unwrap();
    let gamma = mdp.gamma;
    // gamma^100 ~ 2e-10
    let mut env = TabularEnv::new(mdp, 100).unwrap();
    let episodes = 20_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut obs = env.reset(&mut rng);
        let mut ret = 0.0;
        let mut discount = 1.0;
        loop {
            let s = obs.iter().position(|&x| x == 1.0).unwrap();
            assert_eq!(s, env.state());
            let a = sample_categorical(&policy.probs[s], &mut rng);
            let step = env.step(a, &mut rng).unwrap();
            ret += discount * step.reward;
            discount *= gamma;
            obs = step.observation;
            if step.terminal {
                break;
            }
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / episodes as f64;
    let se = ((sum_sq / episodes as f64 - mean * mean) / episodes as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn step_before_reset_is_an_error() {
    let mut env = CartPole::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    assert!(env.step(0, &mut rng).is_err());
    env.reset(&mut rng);
    assert!(env.step(0, &mut rng).is_ok());
    assert!(env.step(5, &mut rng).is_err());
}
