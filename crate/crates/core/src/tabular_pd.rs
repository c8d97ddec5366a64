//! Projected primal-dual iteration on the regularized tabular Lagrangian,
//! with exact (full-expectation) gradients.

use rand::Rng;

use crate::duality::{policy_from_dual, DualVariable};
use crate::error::Result;
use crate::mdp::{dot, random_simplex, TabularMdp, ValueTable};

#[derive(Debug, Clone, PartialEq)]
pub struct PdState {
    pub v: ValueTable,
    pub mu: DualVariable,
    pub step_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdConfig {
    pub eta_v: f64,
    pub eta_mu: f64,
    pub c: f64,
}

impl Default for PdConfig {
    fn default() -> Self {
        Self {
            eta_v: 0.05,
            eta_mu: 0.05,
            c: 1.0,
        }
    }
}

impl PdState {
    /// `V = 0`, `mu` uniform over state-action pairs.
    pub fn initial(mdp: &TabularMdp) -> Self {
        Self {
            v: ValueTable::zeros(mdp.n_states),
            mu: DualVariable::uniform(mdp.n_states, mdp.n_actions),
            step_count: 0,
        }
    }

    /// Random start: `V` uniform in `[0, r_max / (1 - gamma)]`, `mu` uniform on the simplex.
    pub fn random<R: Rng + ?Sized>(mdp: &TabularMdp, rng: &mut R) -> Self {
        let r_max = mdp.reward.iter().flatten().fold(0.0_f64, |m, r| m.max(r.abs()));
        let scale = r_max / (1.0 - mdp.gamma);
        let v = (0..mdp.n_states).map(|_| rng.gen::<f64>() * scale).collect();
        let flat = random_simplex(mdp.n_states * mdp.n_actions, rng);
        let mu = flat.chunks(mdp.n_actions).map(|c| c.to_vec()).collect();
        Self {
            v: ValueTable(v),
            mu: DualVariable { mu },
            step_count: 0,
        }
    }

    /// One simultaneous step: gradient descent in `V`, projected ascent in `mu`.
    pub fn step(&self, mdp: &TabularMdp, config: &PdConfig) -> Self {
        pd_step(self, mdp, config.eta_v, config.eta_mu, config.c)
    }
}

/// Exact gradient of the regularized Lagrangian with respect to `V`.
pub fn primal_gradient(mdp: &TabularMdp, v: &ValueTable, mu: &DualVariable, c: f64) -> Vec<f64> {
    let adv = mdp.advantage_table(v);
    let mut grad: Vec<f64> = mdp.q.iter().map(|q| (1.0 - mdp.gamma) * q).collect();
    for (s, (mu_row, adv_row)) in mu.mu.iter().zip(&adv).enumerate() {
        for (a, (m, adv_sa)) in mu_row.iter().zip(adv_row).enumerate() {
            // d A(s,a) / d V = gamma p(.|s,a) - e_s
            let w = m + 2.0 * c * adv_sa;
            for (t, p) in mdp.transition[s][a].iter().enumerate() {
                grad[t] += w * mdp.gamma * p;
            }
            grad[s] -= w;
        }
    }
    grad
}

pub fn pd_step(state: &PdState, mdp: &TabularMdp, eta_v: f64, eta_mu: f64, c: f64) -> PdState {
    let grad = primal_gradient(mdp, &state.v, &state.mu, c);
    let adv = mdp.advantage_table(&state.v);
    let v = state.v.0.iter().zip(&grad).map(|(v, g)| v - eta_v * g).collect();

    let n_actions = mdp.n_actions;
    let raised: Vec<f64> = state
        .mu
        .mu
        .iter()
        .zip(&adv)
        .flat_map(|(mrow, arow)| mrow.iter().zip(arow).map(|(m, a)| m + eta_mu * a))
        .collect();
    let projected = project_simplex(&raised);
    PdState {
        v: ValueTable(v),
        mu: DualVariable {
            mu: projected.chunks(n_actions).map(|c| c.to_vec()).collect(),
        },
        step_count: state.step_count + 1,
    }
}

/// Euclidean projection onto `{x >= 0, sum x = 1}` (sort-and-threshold).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Gap of the unregularized Lagrangian at the current iterate.
///
/// The dual best response puts all mass on the largest advantage; the primal
/// side is evaluated at the value of the policy encoded by `mu`, for which
/// the Lagrangian collapses to `(1 - gamma) J(pi_mu)`.
pub fn duality_gap(state: &PdState, mdp: &TabularMdp) -> Result<f64> {
    let max_adv = mdp
        .advantage_table(&state.v)
        .into_iter()
        .flatten()
        .fold(f64::NEG_INFINITY, f64::max);
    let upper = (1.0 - mdp.gamma) * dot(&mdp.q, &state.v.0) + max_adv;

    let policy = policy_from_dual(&state.mu);
    let lower = (1.0 - mdp.gamma) * mdp.evaluate_policy_return(&policy)?;
    Ok(upper - lower)
}

/// Runs `iters` steps and records the duality gap at the end of every
/// `window` steps. Returns the final iterate and `(step, gap)` pairs.
pub fn run_primal_dual(
    mdp: &TabularMdp,
    start: PdState,
    config: &PdConfig,
    iters: usize,
    window: usize,
) -> Result<(PdState, Vec<(usize, f64)>)> {
    let window = window.max(1);
    let mut state = start;
    let mut gaps = Vec::with_capacity(iters / window + 1);
    for _ in 0..iters {
        state = state.step(mdp, config);
        if state.step_count.is_multiple_of(window) {
            gaps.push((state.step_count, duality_gap(&state, mdp)?));
        }
    }
    Ok((state, gaps))
}
