//! Finite discounted MDPs and the Bellman quantities built on them.
//!
//! Tabular MDPs are continuing: there are no terminal states, and the
//! episodic structure used by the agents lives in [`crate::envs`].

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability rows and the initial distribution.
pub const PROB_TOL: f64 = 1e-12;

/// Residual above which a dense linear solve is reported as failed.
pub const SOLVE_TOL: f64 = 1e-8;

/// A finite MDP `(S, A, P, r, gamma, q)`.
///
/// `transition[s][a][s']` is the probability of moving from `s` to `s'`
/// under action `a`; `reward[s][a]` is the immediate reward and `q` the
/// initial state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub q: Vec<f64>,
}

/// A randomized stationary policy, `probs[s][a] = pi(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Vec<Vec<f64>>,
}

/// State values, one entry per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable(pub Vec<f64>);

/// One sampled step. `S` is a state id for tabular use or a feature vector
/// for environments with continuous observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S = usize> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
    pub terminal: bool,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// Most probable action per state, ties to the lowest index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|row| {
                let mut best = 0;
                for (a, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (s, row) in self.probs.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(format!("policy row {s} sums to {sum}"));
            }
            if let Some(a) = row.iter().position(|&p| p < 0.0 || !p.is_finite()) {
                out.push(format!("policy entry ({s},{a}) is {}", row[a]));
            }
        }
        out
    }
}

impl ValueTable {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ValueTable {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

impl TabularMdp {
    /// Builds an MDP and rejects it if any invariant is violated.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        gamma: f64,
        q: Vec<f64>,
    ) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, |row| row.len());
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            q,
        };
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    /// Lists every violated invariant; empty iff the MDP is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_states == 0 {
            out.push("n_states must be positive".to_string());
        }
        if self.n_actions == 0 {
            out.push("n_actions must be positive".to_string());
        }
        if self.transition.len() != self.n_states {
            out.push(format!(
                "transition has {} state rows, expected {}",
                self.transition.len(),
                self.n_states
            ));
        }
        for (s, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != self.n_actions {
                out.push(format!(
                    "transition[{s}] has {} actions, expected {}",
                    per_action.len(),
                    self.n_actions
                ));
                continue;
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != self.n_states {
                    out.push(format!(
                        "row ({s},{a}) has length {}, expected {}",
                        row.len(),
                        self.n_states
                    ));
                    continue;
                }
                for (t, &p) in row.iter().enumerate() {
                    if !(p.is_finite() && p >= 0.0) {
                        out.push(format!("p[{s}][{a}][{t}] = {p} is not a probability"));
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    out.push(format!("row ({s},{a}) sums to {sum}"));
                }
            }
        }
        if self.reward.len() != self.n_states {
            out.push(format!(
                "reward has {} rows, expected {}",
                self.reward.len(),
                self.n_states
            ));
        }
        for (s, row) in self.reward.iter().enumerate() {
            if row.len() != self.n_actions {
                out.push(format!(
                    "reward[{s}] has {} entries, expected {}",
                    row.len(),
                    self.n_actions
                ));
            }
            if let Some(a) = row.iter().position(|r| !r.is_finite()) {
                out.push(format!("reward ({s},{a}) is not finite"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            out.push("gamma out of [0,1)".to_string());
        }
        if self.q.len() != self.n_states {
            out.push(format!(
                "q has length {}, expected {}",
                self.q.len(),
                self.n_states
            ));
        } else {
            for (s, &p) in self.q.iter().enumerate() {
                if !(p.is_finite() && p >= 0.0) {
                    out.push(format!("q[{s}] = {p} is not a probability"));
                }
            }
            let sum: f64 = self.q.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(format!("q sums to {sum}"));
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(violations))
        }
    }

    /// Reads the JSON instance format documented in the README.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.ensure_valid()?;
        Ok(mdp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serializes")
    }

    /// `sum_{s'} p(s'|s,a) v(s')`.
    pub fn expected_next_value(&self, v: &[f64], s: usize, a: usize) -> f64 {
        self.transition[s][a].iter().zip(v).map(|(p, v)| p * v).sum()
    }

    /// `r(s,a) + gamma * E[V(s')] - V(s)`.
    pub fn advantage(&self, v: &ValueTable, s: usize, a: usize) -> f64 {
        self.advantage_with_gamma(v, s, a, self.gamma)
    }

    /// Advantage with an explicit discount, used where the discount is a
    /// free parameter (including `gamma = 1`).
    pub fn advantage_with_gamma(&self, v: &ValueTable, s: usize, a: usize, gamma: f64) -> f64 {
        self.reward[s][a] + gamma * self.expected_next_value(&v.0, s, a) - v.0[s]
    }

    pub fn advantage_table(&self, v: &ValueTable) -> Vec<Vec<f64>> {
        self.advantage_table_with_gamma(v, self.gamma)
    }

    pub fn advantage_table_with_gamma(&self, v: &ValueTable, gamma: f64) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.advantage_with_gamma(v, s, a, gamma))
                    .collect()
            })
            .collect()
    }

    /// `Q(s,a) = r(s,a) + gamma * E[V(s')]`.
    pub fn q_values(&self, v: &ValueTable) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.reward[s][a] + self.gamma * self.expected_next_value(&v.0, s, a))
                    .collect()
            })
            .collect()
    }

    /// Draws `s' ~ p(.|s,a)`. Tabular transitions are never terminal.
    ///
    /// Panics if `s` or `a` is out of range.
    pub fn sample_transition<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Transition {
        assert!(s < self.n_states, "state {s} out of range");
        assert!(a < self.n_actions, "action {a} out of range");
        let next_state = sample_categorical(&self.transition[s][a], rng);
        Transition {
            state: s,
            action: a,
            reward: self.reward[s][a],
            next_state,
            terminal: false,
        }
    }

    /// State-to-state transition matrix under `policy`, row-major `P[s][s']`.
    pub fn policy_transition_matrix(&self, policy: &TabularPolicy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, t| {
            (0..self.n_actions)
                .map(|a| policy.probs[s][a] * self.transition[s][a][t])
                .sum()
        })
    }

    pub fn policy_reward(&self, policy: &TabularPolicy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions)
                .map(|a| policy.probs[s][a] * self.reward[s][a])
                .sum()
        })
    }

    /// `V^pi` from `(I - gamma P_pi) V = r_pi`.
    pub fn evaluate_policy(&self, policy: &TabularPolicy) -> Result<ValueTable> {
        let n = self.n_states;
        let p = self.policy_transition_matrix(policy);
        let a = DMatrix::<f64>::identity(n, n) - p * self.gamma;
        let b = self.policy_reward(policy);
        let x = solve_dense(&a, &b)?;
        Ok(ValueTable(x.iter().copied().collect()))
    }

    /// `J(pi) = q . V^pi`, the expected discounted return from `s0 ~ q`.
    pub fn evaluate_policy_return(&self, policy: &TabularPolicy) -> Result<f64> {
        let v = self.evaluate_policy(policy)?;
        Ok(dot(&self.q, &v.0))
    }

    /// Random instance with Dirichlet(1) transition rows, rewards uniform in
    /// `[0, 1)` and a full-support random `q`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let transition = (0..n_states)
            .map(|_| (0..n_actions).map(|_| random_simplex(n_states, rng)).collect())
            .collect();
        let reward = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen::<f64>()).collect())
            .collect();
        Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            q: random_simplex(n_states, rng),
        }
    }
}

/// TD error `r + gamma V(s') - V(s)`, bootstrapping from 0 at terminal steps.
pub fn td_error<S>(transition: &Transition<S>, v_s: f64, v_next: f64, gamma: f64) -> f64 {
    let bootstrap = if transition.terminal { 0.0 } else { v_next };
    transition.reward + gamma * bootstrap - v_s
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair under 1; fall back to the last
    // index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense LU solve with partial pivoting and a residual check.
pub(crate) fn solve_dense(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a.clone().lu().solve(b).ok_or(Error::LinearSolve {
        residual: f64::INFINITY,
        tolerance: SOLVE_TOL,
    })?;
    let residual = (a * &x - b).amax();
    if residual.is_nan() || residual > SOLVE_TOL {
        return Err(Error::LinearSolve {
            residual,
            tolerance: SOLVE_TOL,
        });
    }
    Ok(x)
}
