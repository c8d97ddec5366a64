//! Episodic environments: cart-pole balancing and an adapter that runs any
//! [`TabularMdp`] through the same reset/step interface.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{sample_categorical, TabularMdp};

/// Result of a single environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;

    fn n_actions(&self) -> usize;

    /// Starts a new episode and returns the first observation.
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;

    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<EnvStep>;
}

// Classic cart-pole constants.
pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const POLE_MASS_LENGTH: f64 = POLE_MASS * POLE_HALF_LENGTH;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const X_THRESHOLD: f64 = 2.4;
pub const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const MAX_EPISODE_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub t: usize,
}

impl CartPoleState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    /// Out of bounds or at the step cap.
    pub fn is_terminal(&self) -> bool {
        self.x < -X_THRESHOLD
            || self.x > X_THRESHOLD
            || self.theta < -THETA_THRESHOLD
            || self.theta > THETA_THRESHOLD
            || self.t >= MAX_EPISODE_STEPS
    }
}

/// All four components uniform in `[-0.05, 0.05]`.
pub fn cartpole_reset<R: Rng + ?Sized>(rng: &mut R) -> CartPoleState {
    let mut u = || rng.gen_range(-0.05..0.05);
    CartPoleState {
        x: u(),
        x_dot: u(),
        theta: u(),
        theta_dot: u(),
        t: 0,
    }
}

/// One explicit Euler step of the cart-pole equations under `force`.
/// Does not touch the step counter.
pub fn cartpole_dynamics(s: &CartPoleState, force: f64) -> CartPoleState {
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        theta: s.theta + TAU * s.theta_dot,
        theta_dot: s.theta_dot + TAU * theta_acc,
        t: s.t,
    }
}

/// Applies action 0 (push left) or 1 (push right). Reward is 1 per step,
/// including the step that ends the episode.
pub fn cartpole_step(state: &CartPoleState, action: usize) -> Result<(CartPoleState, EnvStep)> {
    if state.is_terminal() {
        return Err(Error::Environment {
            step: state.t,
            message: "step called on a terminal cart-pole state".into(),
        });
    }
    let force = match action {
        0 => -FORCE_MAG,
        1 => FORCE_MAG,
        other => {
            return Err(Error::Environment {
                step: state.t,
                message: format!("invalid cart-pole action {other}"),
            })
        }
    };
    let mut next = cartpole_dynamics(state, force);
    next.t = state.t + 1;
    let step = EnvStep {
        observation: next.observation(),
        reward: 1.0,
        terminal: next.is_terminal(),
    };
    Ok((next, step))
}

#[derive(Debug, Clone, Default)]
pub struct CartPole {
    state: Option<CartPoleState>,
}

impl CartPole {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> Option<&CartPoleState> {
        self.state.as_ref()
    }
}

impl Environment for CartPole {
    fn observation_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let s = cartpole_reset(rng);
        self.state = Some(s);
        s.observation()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Result<EnvStep> {
        let state = self.state.as_ref().ok_or_else(|| Error::Environment {
            step: 0,
            message: "step called before reset".into(),
        })?;
        let (next, step) = cartpole_step(state, action)?;
        self.state = Some(next);
        Ok(step)
    }
}

/// Runs a tabular MDP episodically: `s0 ~ q`, one-hot observations, and an
/// episode that ends only at `horizon`.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    horizon: usize,
    state: usize,
    t: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, horizon: usize) -> Result<Self> {
        mdp.ensure_valid()?;
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            mdp,
            horizon,
            state: 0,
            t: 0,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[s] = 1.0;
        v
    }
}

impl Environment for TabularEnv {
    fn observation_dim(&self) -> usize {
        self.mdp.n_states
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.state = sample_categorical(&self.mdp.q, rng);
        self.t = 0;
        self.one_hot(self.state)
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<EnvStep> {
        if self.t >= self.horizon {
            return Err(Error::Environment {
                step: self.t,
                message: "episode already reached its horizon".into(),
            });
        }
        if action >= self.mdp.n_actions {
            return Err(Error::Environment {
                step: self.t,
                message: format!("invalid action {action}"),
            });
        }
        let tr = self.mdp.sample_transition(self.state, action, rng);
        self.state = tr.next_state;
        self.t += 1;
        Ok(EnvStep {
            observation: self.one_hot(self.state),
            reward: tr.reward,
            terminal: self.t >= self.horizon,
        })
    }
}
