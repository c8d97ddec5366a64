//! Exact tabular solutions of the Bellman LP and its dual.
//!
//! Everything here is computed in closed form or by dense linear solves and
//! serves as the reference the sampled and parameterized methods are checked
//! against. Occupancy measures use the normalized convention: `mu` sums to 1,
//! i.e. the discounted visitation counts are scaled by `1 - gamma`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{dot, solve_dense, TabularMdp, TabularPolicy, ValueTable, SOLVE_TOL};

/// Damping toward the uniform distribution used by [`stationary_distribution`].
pub const STATIONARY_DAMPING: f64 = 1e-3;

/// Iteration cap for the stationary power iteration.
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

const STATIONARY_TOL: f64 = 1e-13;

/// Nonnegative state-action measure `mu[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariable {
    pub mu: Vec<Vec<f64>>,
}

/// Probability distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub alpha: Vec<f64>,
}

/// Fixed point of the damped chain induced by a policy.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub distribution: StateDistribution,
    /// Mixing weight of the uniform distribution in the iterated chain.
    pub damping: f64,
    pub iterations: usize,
    /// False when the undamped chain has more than one closed class, so its
    /// stationary distribution is not unique and the damped one is only a
    /// canonical pick.
    pub unique: bool,
}

impl DualVariable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            mu: vec![vec![0.0; n_actions]; n_states],
        }
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let w = 1.0 / (n_states * n_actions) as f64;
        Self {
            mu: vec![vec![w; n_actions]; n_states],
        }
    }

    /// `mu(s,a) = alpha(s) pi(a|s)`.
    pub fn from_factors(alpha: &StateDistribution, policy: &TabularPolicy) -> Self {
        let mu = alpha
            .alpha
            .iter()
            .zip(&policy.probs)
            .map(|(&w, row)| row.iter().map(|p| w * p).collect())
            .collect();
        Self { mu }
    }

    pub fn total(&self) -> f64 {
        self.mu.iter().flatten().sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.mu.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Value iteration to a sup-norm Bellman residual of at most `tol`.
///
/// Returns the values together with the number of backups applied to reach
/// them.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<(ValueTable, usize)> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut v = ValueTable::zeros(mdp.n_states);
    let mut residual = f64::INFINITY;
    for iters in 0..=max_iters {
        let backup = bellman_backup(mdp, &v);
        residual = backup
            .iter()
            .zip(&v.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok((v, iters));
        }
        v = ValueTable(backup);
    }
    Err(Error::NotConverged {
        what: "value iteration",
        iterations: max_iters,
        residual,
    })
}

fn bellman_backup(mdp: &TabularMdp, v: &ValueTable) -> Vec<f64> {
    mdp.q_values(v)
        .into_iter()
        .map(|row| row.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Deterministic greedy policy; ties go to the lowest action index.
pub fn greedy_policy(mdp: &TabularMdp, v: &ValueTable) -> TabularPolicy {
    let actions: Vec<usize> = mdp
        .q_values(v)
        .iter()
        .map(|row| {
            let mut best = 0;
            for (a, &q) in row.iter().enumerate() {
                if q > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    TabularPolicy::deterministic(&actions, mdp.n_actions)
}

/// Normalized discounted occupancy `mu(s,a) = d(s) pi(a|s)` where
/// `(I - gamma P_pi^T) d = (1 - gamma) q`.
pub fn occupancy_measure(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DualVariable> {
    let n = mdp.n_states;
    let p = mdp.policy_transition_matrix(policy);
    let a = DMatrix::<f64>::identity(n, n) - p.transpose() * mdp.gamma;
    let b = DVector::from_iterator(n, mdp.q.iter().map(|q| (1.0 - mdp.gamma) * q));
    let d = solve_dense(&a, &b)?;
    let mu = (0..n)
        .map(|s| {
            let ds = d[s].max(0.0);
            policy.probs[s].iter().map(|p| ds * p).collect()
        })
        .collect();
    Ok(DualVariable { mu })
}

/// Max-abs residual of the flow constraint
/// `sum_a mu(s,a) = (1-gamma) q(s) + gamma sum_{s',a} p(s|s',a) mu(s',a)`.
pub fn flow_residual(mdp: &TabularMdp, mu: &DualVariable) -> f64 {
    let marginal = mu.state_marginal();
    (0..mdp.n_states)
        .map(|s| {
            let inflow: f64 = (0..mdp.n_states)
                .flat_map(|t| (0..mdp.n_actions).map(move |a| (t, a)))
                .map(|(t, a)| mu.mu[t][a] * mdp.transition[t][a][s])
                .sum();
            (marginal[s] - (1.0 - mdp.gamma) * mdp.q[s] - mdp.gamma * inflow).abs()
        })
        .fold(0.0, f64::max)
}

/// `pi(a|s) = mu(s,a) / sum_a mu(s,a)`; rows without mass become uniform.
pub fn policy_from_dual(mu: &DualVariable) -> TabularPolicy {
    let probs = mu
        .mu
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter().map(|m| m / total).collect()
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect();
    TabularPolicy { probs }
}

/// Splits `mu` into a state distribution and a policy, `mu = total * alpha * pi`.
pub fn factor_dual(mu: &DualVariable) -> Result<(StateDistribution, TabularPolicy)> {
    let total = mu.total();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidArgument("dual variable has zero total mass".into()));
    }
    let alpha = mu.state_marginal().into_iter().map(|m| m / total).collect();
    Ok((StateDistribution { alpha }, policy_from_dual(mu)))
}

/// Regularized Lagrangian
/// `(1-gamma) q.V + sum_{s,a} [mu(s,a) A(s,a) + c A(s,a)^2]`;
/// `c = 0` is the plain Bellman Lagrangian.
pub fn lagrangian_value(mdp: &TabularMdp, v: &ValueTable, mu: &DualVariable, c: f64) -> f64 {
    let adv = mdp.advantage_table(v);
    let coupling: f64 = adv
        .iter()
        .zip(&mu.mu)
        .flat_map(|(arow, mrow)| arow.iter().zip(mrow))
        .map(|(&a, &m)| m * a + c * a * a)
        .sum();
    (1.0 - mdp.gamma) * dot(&mdp.q, &v.0) + coupling
}

/// `max_{s,a} |mu(s,a) A(s,a)|`.
pub fn complementary_slackness_residual(mdp: &TabularMdp, v: &ValueTable, mu: &DualVariable) -> f64 {
    mdp.advantage_table(v)
        .iter()
        .zip(&mu.mu)
        .flat_map(|(arow, mrow)| arow.iter().zip(mrow))
        .map(|(a, m)| (a * m).abs())
        .fold(0.0, f64::max)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &[Vec<f64>]) -> TabularPolicy {
    TabularPolicy {
        probs: logits.iter().map(|row| softmax(row)).collect(),
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Gradient of `sum_{s,a} alpha(s) pi(a|s) A(s,a)` with respect to the
/// logits of a tabular softmax policy, holding `V` fixed.
///
/// `gamma_override` replaces the MDP discount inside the advantage, which
/// allows the undiscounted (`gamma = 1`) case.
pub fn dual_gradient_policy(
    mdp: &TabularMdp,
    v: &ValueTable,
    alpha: &StateDistribution,
    policy_logits: &[Vec<f64>],
    gamma_override: Option<f64>,
) -> Vec<Vec<f64>> {
    let gamma = gamma_override.unwrap_or(mdp.gamma);
    let adv = mdp.advantage_table_with_gamma(v, gamma);
    policy_logits
        .iter()
        .enumerate()
        .map(|(s, logits)| {
            let pi = softmax(logits);
            let baseline = dot(&pi, &adv[s]);
            pi.iter()
                .zip(&adv[s])
                .map(|(p, a)| alpha.alpha[s] * p * (a - baseline))
                .collect()
        })
        .collect()
}

/// Stationary distribution of the chain induced by `policy`, damped by
/// [`STATIONARY_DAMPING`].
pub fn stationary_distribution(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Stationary> {
    stationary_distribution_damped(mdp, policy, STATIONARY_DAMPING)
}

/// Power iteration from `q` on `(1 - damping) P_pi + damping * uniform`.
pub fn stationary_distribution_damped(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    damping: f64,
) -> Result<Stationary> {
    if !(0.0..=1.0).contains(&damping) {
        return Err(Error::InvalidArgument(format!("damping {damping} outside [0,1]")));
    }
    let n = mdp.n_states;
    let p = mdp.policy_transition_matrix(policy);
    let damped = p * (1.0 - damping) + DMatrix::from_element(n, n, damping / n as f64);
    let step = damped.transpose();
    let mut rho = DVector::from_column_slice(&mdp.q);
    let mut diff = f64::INFINITY;
    for it in 1..=STATIONARY_MAX_ITERS {
        let next = &step * &rho;
        diff = (&next - &rho).lp_norm(1);
        rho = next;
        if diff <= STATIONARY_TOL {
            let total = rho.sum();
            return Ok(Stationary {
                distribution: StateDistribution {
                    alpha: rho.iter().map(|x| x / total).collect(),
                },
                damping,
                iterations: it,
                unique: closed_class_count(mdp, policy) == 1,
            });
        }
    }
    Err(Error::NotConverged {
        what: "stationary power iteration",
        iterations: STATIONARY_MAX_ITERS,
        residual: diff,
    })
}

/// Number of closed communicating classes of the undamped chain.
fn closed_class_count(mdp: &TabularMdp, policy: &TabularPolicy) -> usize {
    let n = mdp.n_states;
    let p = mdp.policy_transition_matrix(policy);
    // reach[i][j]: j reachable from i
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![i];
        row[i] = true;
        while let Some(u) = stack.pop() {
            for w in 0..n {
                if p[(u, w)] > 0.0 && !row[w] {
                    row[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    // A state is recurrent iff everything it reaches can reach it back.
    let recurrent: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let mut seen = vec![false; n];
    let mut classes = 0;
    for i in 0..n {
        if recurrent[i] && !seen[i] {
            classes += 1;
            for j in 0..n {
                if reach[i][j] {
                    seen[j] = true;
                }
            }
        }
    }
    classes
}

/// Solves the damped stationary equations directly, replacing one balance
/// equation with the normalization. Used as a cross-check for the power
/// iteration.
pub fn stationary_by_linear_solve(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    damping: f64,
) -> Result<StateDistribution> {
    let n = mdp.n_states;
    let p = mdp.policy_transition_matrix(policy);
    let damped = p * (1.0 - damping) + DMatrix::from_element(n, n, damping / n as f64);
    let mut a = damped.transpose() - DMatrix::<f64>::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(Error::LinearSolve {
        residual: f64::INFINITY,
        tolerance: SOLVE_TOL,
    })?;
    Ok(StateDistribution {
        alpha: x.iter().copied().collect(),
    })
}
