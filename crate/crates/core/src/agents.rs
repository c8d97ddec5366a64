//! Online primal-dual policy learning and the one-step TD actor-critic
//! baseline.
//!
//! Both agents share one episode loop and one dual (policy) update,
//! `theta_pi += eta_pi * delta * grad log pi(a|s)`. They differ only in the
//! primal (value) update:
//!
//! * primal-dual descends the single-transition surrogate of the regularized
//!   Lagrangian, `(1 - gamma) V(s0) + delta + c * delta^2`, differentiating
//!   through both `V(s)` and `V(s')`;
//! * actor-critic takes the semi-gradient step `delta * grad V(s)` with the
//!   bootstrapped target held fixed.
//!
//! The TD error is always computed before either network changes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, td_error, Transition};
use crate::neural::{init_mlp, GradientBundle, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "pd")]
    PrimalDual,
    #[serde(rename = "ac")]
    ActorCritic,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::PrimalDual => "pd",
            Algorithm::ActorCritic => "ac",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pd" | "primal_dual" | "primal-dual" => Ok(Algorithm::PrimalDual),
            "ac" | "actor_critic" | "actor-critic" => Ok(Algorithm::ActorCritic),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub eta_v: f64,
    pub eta_pi: f64,
    pub gamma: f64,
    /// Penalty weight on the squared advantage.
    pub c: f64,
    /// Step cap per episode.
    pub max_steps: usize,
    pub algorithm: Algorithm,
    /// Apply the `(1 - gamma) grad V(s0)` term of the primal gradient.
    pub start_state_term: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            eta_v: 1e-3,
            eta_pi: 1e-5,
            gamma: 0.99,
            c: 1.0,
            max_steps: 200,
            algorithm: Algorithm::PrimalDual,
            start_state_term: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.eta_v.is_finite() && self.eta_v >= 0.0) {
            problems.push(format!("eta_v = {}", self.eta_v));
        }
        if !(self.eta_pi.is_finite() && self.eta_pi >= 0.0) {
            problems.push(format!("eta_pi = {}", self.eta_pi));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("gamma = {} outside [0,1)", self.gamma));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            problems.push(format!("c = {}", self.c));
        }
        if self.max_steps == 0 {
            problems.push("max_steps must be at least 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join(", ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_index: usize,
    pub cumulative_reward: f64,
    pub steps: usize,
}

/// What one step of the loop observed and used.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub transition: Transition<Vec<f64>>,
    pub delta: f64,
}

/// TD error of a feature-space transition under `value_net`.
pub fn transition_td_error(value_net: &Mlp, transition: &Transition<Vec<f64>>, gamma: f64) -> Result<f64> {
    let v_s = value_net.forward_value(&transition.state)?;
    let v_next = if transition.terminal {
        0.0
    } else {
        value_net.forward_value(&transition.next_state)?
    };
    Ok(td_error(transition, v_s, v_next, gamma))
}

/// Sampled gradient of the regularized Lagrangian with respect to the value
/// parameters:
/// `(1 - gamma) grad V(s0) + (1 + 2 c delta) (gamma grad V(s') - grad V(s))`.
///
/// `delta` is computed from `value_net` as it stands.
pub fn primal_gradient(
    value_net: &Mlp,
    transition: &Transition<Vec<f64>>,
    s0_features: &[f64],
    config: &AgentConfig,
) -> Result<GradientBundle> {
    let delta = transition_td_error(value_net, transition, config.gamma)?;
    primal_gradient_with_delta(value_net, transition, s0_features, delta, config)
}

pub(crate) fn primal_gradient_with_delta(
    value_net: &Mlp,
    transition: &Transition<Vec<f64>>,
    s0_features: &[f64],
    delta: f64,
    config: &AgentConfig,
) -> Result<GradientBundle> {
    let mut grad = GradientBundle::zeros_like(value_net);
    if config.start_state_term {
        value_net.accumulate_value_grad(s0_features, 1.0 - config.gamma, &mut grad)?;
    }
    let weight = 1.0 + 2.0 * config.c * delta;
    if !transition.terminal {
        value_net.accumulate_value_grad(&transition.next_state, weight * config.gamma, &mut grad)?;
    }
    value_net.accumulate_value_grad(&transition.state, -weight, &mut grad)?;
    Ok(grad)
}

/// `delta * grad log pi(a|s)`; the dual step ascends along it.
pub fn dual_gradient(
    policy_net: &Mlp,
    transition: &Transition<Vec<f64>>,
    delta: f64,
) -> Result<GradientBundle> {
    let mut grad = GradientBundle::zeros_like(policy_net);
    policy_net.accumulate_log_policy_grad(&transition.state, transition.action, delta, &mut grad)?;
    Ok(grad)
}

/// Semi-gradient TD direction `-delta * grad V(s)`; the value step descends
/// along it.
pub fn actor_critic_primal_gradient(
    value_net: &Mlp,
    transition: &Transition<Vec<f64>>,
    delta: f64,
) -> Result<GradientBundle> {
    value_net.backprop_value(&transition.state, -delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub value_net: Mlp,
    pub policy_net: Mlp,
    pub config: AgentConfig,
}

impl Agent {
    /// Fresh networks `obs_dim -> hidden... -> 1` and `obs_dim -> hidden... -> n_actions`.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let sizes = |out: usize| {
            std::iter::once(obs_dim)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };
        let value_net = init_mlp(&sizes(1), rng)?;
        let policy_net = init_mlp(&sizes(n_actions), rng)?;
        Ok(Self {
            value_net,
            policy_net,
            config,
        })
    }

    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<usize> {
        let probs = self.policy_net.forward_policy(observation)?;
        Ok(sample_categorical(&probs, rng))
    }

    /// Primal then dual update for one transition. Returns the TD error,
    /// evaluated before the value network moves.
    pub fn update(&mut self, transition: &Transition<Vec<f64>>, s0_features: &[f64]) -> Result<f64> {
        let cfg = self.config;
        let delta = transition_td_error(&self.value_net, transition, cfg.gamma)?;

        let primal = match cfg.algorithm {
            Algorithm::PrimalDual => {
                primal_gradient_with_delta(&self.value_net, transition, s0_features, delta, &cfg)?
            }
            Algorithm::ActorCritic => actor_critic_primal_gradient(&self.value_net, transition, delta)?,
        };
        self.value_net.sgd_step(&primal, cfg.eta_v, -1.0)?;

        let dual = dual_gradient(&self.policy_net, transition, delta)?;
        self.policy_net.sgd_step(&dual, cfg.eta_pi, 1.0)?;
        Ok(delta)
    }

    /// One episode of at most `max_steps` transitions, updating after each.
    pub fn run_episode<E, R1, R2>(
        &mut self,
        env: &mut E,
        episode_index: usize,
        env_rng: &mut R1,
        action_rng: &mut R2,
    ) -> Result<EpisodeResult>
    where
        E: Environment,
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
    {
        self.run_episode_observed(env, episode_index, env_rng, action_rng, |_| {})
    }

    /// Like [`Agent::run_episode`], handing every step to `observer`.
    pub fn run_episode_observed<E, R1, R2, F>(
        &mut self,
        env: &mut E,
        episode_index: usize,
        env_rng: &mut R1,
        action_rng: &mut R2,
        mut observer: F,
    ) -> Result<EpisodeResult>
    where
        E: Environment,
        R1: Rng + ?Sized,
        R2: Rng + ?Sized,
        F: FnMut(&StepInfo),
    {
        let s0 = env.reset(env_rng);
        let mut state = s0.clone();
        let mut total = 0.0;
        let mut steps = 0;
        while steps < self.config.max_steps {
            let action = self.act(&state, action_rng)?;
            let step = env.step(action, env_rng).map_err(|e| match e {
                Error::Environment { .. } => e,
                other => Error::Environment {
                    step: steps,
                    message: other.to_string(),
                },
            })?;
            steps += 1;
            total += step.reward;
            let transition = Transition {
                state,
                action,
                reward: step.reward,
                next_state: step.observation,
                terminal: step.terminal,
            };
            let delta = self.update(&transition, &s0)?;
            observer(&StepInfo {
                transition: transition.clone(),
                delta,
            });
            if transition.terminal {
                break;
            }
            state = transition.next_state;
        }
        Ok(EpisodeResult {
            episode_index,
            cumulative_reward: total,
            steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_and_transition(seed: u64, terminal: bool) -> (Mlp, Transition<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = init_mlp(&[3, 5, 1], &mut rng).unwrap();
        let mut feat = || (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let tr = Transition {
            state: feat(),
            action: 1,
            reward: 0.7,
            next_state: feat(),
            terminal,
        };
        (net, tr, feat())
    }

    #[test]
    fn pure_lagrangian_direction() {
        let (net, tr, s0) = net_and_transition(1, false);
        let cfg = AgentConfig {
            c: 0.0,
            gamma: 0.99,
            start_state_term: false,
            ..AgentConfig::default()
        };
        // gamma = 1 is outside the config invariant, so go through the internal form
        let cfg1 = AgentConfig { gamma: 1.0, ..cfg };
        let g = primal_gradient_with_delta(&net, &tr, &s0, 0.3, &cfg1).unwrap();
        let mut expect = net.backprop_value(&tr.next_state, 1.0).unwrap();
        expect.add_scaled(&net.backprop_value(&tr.state, 1.0).unwrap(), -1.0);
        for (a, b) in g.values().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(primal_gradient(&net, &tr, &s0, &cfg).unwrap().is_finite());
    }

    #[test]
    fn penalty_root_leaves_only_start_term() {
        let (net, tr, s0) = net_and_transition(2, false);
        let cfg = AgentConfig {
            c: 2.0,
            ..AgentConfig::default()
        };
        let g = primal_gradient_with_delta(&net, &tr, &s0, -1.0 / (2.0 * cfg.c), &cfg).unwrap();
        let expect = net.backprop_value(&s0, 1.0 - cfg.gamma).unwrap();
        assert_eq!(g, expect);
    }

    #[test]
    fn terminal_drops_next_state_path() {
        let (net, tr, s0) = net_and_transition(3, true);
        let cfg = AgentConfig {
            start_state_term: false,
            ..AgentConfig::default()
        };
        let delta = transition_td_error(&net, &tr, cfg.gamma).unwrap();
        assert_eq!(delta, tr.reward - net.forward_value(&tr.state).unwrap());
        let g = primal_gradient(&net, &tr, &s0, &cfg).unwrap();
        let expect = net
            .backprop_value(&tr.state, -(1.0 + 2.0 * cfg.c * delta))
            .unwrap();
        for (a, b) in g.values().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dual_gradient_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = init_mlp(&[3, 5, 2], &mut rng).unwrap();
        let (_, tr, _) = net_and_transition(4, false);
        assert_eq!(dual_gradient(&net, &tr, 0.0).unwrap().max_abs(), 0.0);
        let pos = dual_gradient(&net, &tr, 1.0).unwrap();
        let neg = dual_gradient(&net, &tr, -1.0).unwrap();
        assert_eq!(neg, pos.clone().scaled(-1.0));
        assert_eq!(pos, net.backprop_log_policy(&tr.state, tr.action).unwrap());
    }

    #[test]
    fn actor_critic_matches_degenerate_primal_dual() {
        let (net, tr, s0) = net_and_transition(5, false);
        assert_eq!(
            actor_critic_primal_gradient(&net, &tr, 0.0).unwrap().max_abs(),
            0.0
        );
        // c = 0, gamma = 0, no start term: primal-dual gives -grad V(s),
        // which is the actor-critic direction at delta = 1
        let cfg = AgentConfig {
            c: 0.0,
            gamma: 0.0,
            start_state_term: false,
            ..AgentConfig::default()
        };
        let pd = primal_gradient(&net, &tr, &s0, &cfg).unwrap();
        let ac = actor_critic_primal_gradient(&net, &tr, 1.0).unwrap();
        assert_eq!(pd, ac);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        assert!(AgentConfig {
            gamma: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            c: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AgentConfig {
            max_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!("ac".parse::<Algorithm>().unwrap(), Algorithm::ActorCritic);
        assert!("dqn".parse::<Algorithm>().is_err());
    }
}
