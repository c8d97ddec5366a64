//! Central finite-difference checks of the network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::neural::{init_mlp, Mlp};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]; keeps partials that are
/// essentially zero from turning rounding noise into large ratios.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(theta + h e_i) - f(theta - h e_i)) / 2h` for every parameter `i`.
pub fn central_differences<F>(net: &Mlp, h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&Mlp) -> Result<f64>,
{
    let mut probe = net.clone();
    (0..net.n_params())
        .map(|i| {
            let orig = *probe.param_mut(i);
            *probe.param_mut(i) = orig + h;
            let up = f(&probe)?;
            *probe.param_mut(i) = orig - h;
            let down = f(&probe)?;
            *probe.param_mut(i) = orig;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub layer_sizes: Vec<usize>,
    pub value_error: f64,
    pub log_policy_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub cases: Vec<GradcheckCase>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.cases
            .iter()
            .map(|c| c.value_error.max(c.log_policy_error))
            .fold(0.0, f64::max)
    }
}

/// Checks `n_nets` random networks with hidden widths in `4..=64`.
pub fn run_gradcheck(n_nets: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        let n_in = rng.gen_range(1..=6);
        let depth = rng.gen_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(4..=64)).collect();
        let n_actions = rng.gen_range(2..=4);
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sizes = |out: usize| {
            std::iter::once(n_in)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };

        let value_net = perturbed(init_mlp(&sizes(1), &mut rng)?, &mut rng);
        let analytic = value_net.backprop_value(&x, 1.0)?.to_vec();
        let numeric = central_differences(&value_net, FD_STEP, |n| n.forward_value(&x))?;
        let value_error = max_relative_error(&analytic, &numeric);

        let policy_net = perturbed(init_mlp(&sizes(n_actions), &mut rng)?, &mut rng);
        let action = rng.gen_range(0..n_actions);
        let analytic = policy_net.backprop_log_policy(&x, action)?.to_vec();
        let numeric = central_differences(&policy_net, FD_STEP, |n| Ok(n.forward_policy(&x)?[action].ln()))?;
        let log_policy_error = max_relative_error(&analytic, &numeric);

        cases.push(GradcheckCase {
            layer_sizes: sizes(n_actions),
            value_error,
            log_policy_error,
        });
    }
    Ok(GradcheckReport { cases })
}

/// Nonzero biases so every parameter has a generic gradient.
fn perturbed<R: Rng + ?Sized>(mut net: Mlp, rng: &mut R) -> Mlp {
    for l in net.layers_mut() {
        for b in &mut l.biases {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    net
}
