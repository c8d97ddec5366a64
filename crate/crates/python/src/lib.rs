//! Python bindings: tabular MDP oracles, tabular primal-dual, networks, and
//! the cart-pole experiment harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdrl_core::agents::{AgentConfig, Algorithm};
use pdrl_core::duality::{self, DualVariable, StateDistribution};
use pdrl_core::envs::{self, CartPoleState};
use pdrl_core::mdp::{self, TabularPolicy, ValueTable};
use pdrl_core::tabular_pd::{self, PdConfig, PdState};
use pdrl_core::{gradcheck, harness, neural, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for pdrl_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// `(x, x_dot, theta, theta_dot, t)`
type CartPoleTuple = (f64, f64, f64, f64, usize);

/// `(V, mu, [(step, gap), ...])`
type PdRun = (Vec<f64>, Vec<Vec<f64>>, Vec<(usize, f64)>);

fn policy(probs: Vec<Vec<f64>>) -> TabularPolicy {
    TabularPolicy { probs }
}

#[pyclass(name = "TabularMdp", module = "pdrl")]
struct PyTabularMdp {
    inner: mdp::TabularMdp,
}

#[pymethods]
impl PyTabularMdp {
    #[new]
    fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, gamma: f64, q: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: mdp::TabularMdp::new(transition, reward, gamma, q).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mdp::TabularMdp::from_json(text).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: mdp::TabularMdp::load(path).py()?,
        })
    }

    #[staticmethod]
    fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        if n_states == 0 || n_actions == 0 || !(0.0..1.0).contains(&gamma) {
            return Err(PyValueError::new_err(
                "need n_states, n_actions >= 1 and gamma in [0, 1)",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: mdp::TabularMdp::random(n_states, n_actions, gamma, &mut rng),
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn transition(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.transition.clone()
    }

    #[getter]
    fn reward(&self) -> Vec<Vec<f64>> {
        self.inner.reward.clone()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.q.clone()
    }

    /// Returns `(V*, number of backups)`.
    #[pyo3(signature = (tol = 1e-12, max_iters = 10_000_000))]
    fn value_iteration(&self, tol: f64, max_iters: usize) -> PyResult<(Vec<f64>, usize)> {
        let (v, iters) = duality::value_iteration(&self.inner, tol, max_iters).py()?;
        Ok((v.0, iters))
    }

    fn greedy_policy(&self, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check_len(v.len())?;
        Ok(duality::greedy_policy(&self.inner, &ValueTable(v)).probs)
    }

    fn advantage_table(&self, v: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        self.check_len(v.len())?;
        Ok(self.inner.advantage_table(&ValueTable(v)))
    }

    fn evaluate_policy(&self, probs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.evaluate_policy(&self.checked_policy(probs)?).py()?.0)
    }

    fn evaluate_policy_return(&self, probs: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner
            .evaluate_policy_return(&self.checked_policy(probs)?)
            .py()
    }

    fn occupancy_measure(&self, probs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(
            duality::occupancy_measure(&self.inner, &self.checked_policy(probs)?)
                .py()?
                .mu,
        )
    }

    #[pyo3(signature = (v, mu, c = 0.0))]
    fn lagrangian_value(&self, v: Vec<f64>, mu: Vec<Vec<f64>>, c: f64) -> PyResult<f64> {
        self.check_len(v.len())?;
        self.check_len(mu.len())?;
        Ok(duality::lagrangian_value(
            &self.inner,
            &ValueTable(v),
            &DualVariable { mu },
            c,
        ))
    }

    fn complementary_slackness_residual(&self, v: Vec<f64>, mu: Vec<Vec<f64>>) -> PyResult<f64> {
        self.check_len(v.len())?;
        self.check_len(mu.len())?;
        Ok(duality::complementary_slackness_residual(
            &self.inner,
            &ValueTable(v),
            &DualVariable { mu },
        ))
    }

    #[pyo3(signature = (v, alpha, logits, gamma = None))]
    fn dual_gradient_policy(
        &self,
        v: Vec<f64>,
        alpha: Vec<f64>,
        logits: Vec<Vec<f64>>,
        gamma: Option<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        self.check_len(v.len())?;
        self.check_len(alpha.len())?;
        self.check_len(logits.len())?;
        Ok(duality::dual_gradient_policy(
            &self.inner,
            &ValueTable(v),
            &StateDistribution { alpha },
            &logits,
            gamma,
        ))
    }

    /// Returns `(distribution, unique)`.
    fn stationary_distribution(&self, probs: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, bool)> {
        let st = duality::stationary_distribution(&self.inner, &self.checked_policy(probs)?).py()?;
        Ok((st.distribution.alpha, st.unique))
    }

    /// Exact-gradient primal-dual. Returns `(V, mu, [(step, gap), ...])`.
    #[pyo3(signature = (eta_v = 0.05, eta_mu = 0.05, c = 1.0, iters = 100_000, window = 1000, seed = None))]
    fn run_primal_dual(
        &self,
        eta_v: f64,
        eta_mu: f64,
        c: f64,
        iters: usize,
        window: usize,
        seed: Option<u64>,
    ) -> PyResult<PdRun> {
        let start = match seed {
            Some(s) => PdState::random(&self.inner, &mut ChaCha8Rng::seed_from_u64(s)),
            None => PdState::initial(&self.inner),
        };
        let config = PdConfig { eta_v, eta_mu, c };
        let (state, gaps) = tabular_pd::run_primal_dual(&self.inner, start, &config, iters, window).py()?;
        Ok((state.v.0, state.mu.mu, gaps))
    }

    fn __repr__(&self) -> String {
        format!(
            "TabularMdp(n_states={}, n_actions={}, gamma={})",
            self.inner.n_states, self.inner.n_actions, self.inner.gamma
        )
    }
}

impl PyTabularMdp {
    fn check_len(&self, n: usize) -> PyResult<()> {
        if n != self.inner.n_states {
            return Err(PyValueError::new_err(format!(
                "expected {} states, got {n}",
                self.inner.n_states
            )));
        }
        Ok(())
    }

    fn checked_policy(&self, probs: Vec<Vec<f64>>) -> PyResult<TabularPolicy> {
        self.check_len(probs.len())?;
        let p = policy(probs);
        let problems = p.validate();
        if !problems.is_empty() {
            return Err(PyValueError::new_err(problems.join("; ")));
        }
        if p.probs.iter().any(|row| row.len() != self.inner.n_actions) {
            return Err(PyValueError::new_err(
                "policy rows must have one entry per action",
            ));
        }
        Ok(p)
    }
}

/// `mu(s, .) / sum_a mu(s, a)`, uniform on rows with no mass.
#[pyfunction]
fn policy_from_dual(mu: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    duality::policy_from_dual(&DualVariable { mu }).probs
}

#[pyfunction]
fn project_simplex(y: Vec<f64>) -> Vec<f64> {
    tabular_pd::project_simplex(&y)
}

#[pyclass(name = "Mlp", module = "pdrl")]
struct PyMlp {
    inner: neural::Mlp,
}

#[pymethods]
impl PyMlp {
    /// Randomly initialized network with the given layer sizes.
    #[new]
    #[pyo3(signature = (layer_sizes, seed = 0))]
    fn new(layer_sizes: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: neural::init_mlp(&layer_sizes, &mut rng).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: neural::Mlp::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }

    fn set_param(&mut self, index: usize, value: f64) -> PyResult<()> {
        if index >= self.inner.n_params() {
            return Err(PyValueError::new_err(format!(
                "parameter index {index} out of range"
            )));
        }
        *self.inner.param_mut(index) = value;
        Ok(())
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).py()
    }

    fn forward_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.forward_value(&x).py()
    }

    fn forward_policy(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward_policy(&x).py()
    }

    /// Gradient of `V(x)`, flattened in parameter order.
    fn backprop_value(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.backprop_value(&x, 1.0).py()?.to_vec())
    }

    /// Gradient of `log pi(action | x)`, flattened in parameter order.
    fn backprop_log_policy(&self, x: Vec<f64>, action: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.backprop_log_policy(&x, action).py()?.to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Mlp({:?})", self.inner.layer_sizes())
    }
}

/// One cart-pole step from `(x, x_dot, theta, theta_dot, t)`.
/// Returns `(next_state, reward, terminal)`.
#[pyfunction]
fn cartpole_step(state: CartPoleTuple, action: usize) -> PyResult<(CartPoleTuple, f64, bool)> {
    let (x, x_dot, theta, theta_dot, t) = state;
    let s = CartPoleState {
        x,
        x_dot,
        theta,
        theta_dot,
        t,
    };
    let (n, step) = envs::cartpole_step(&s, action).py()?;
    Ok((
        (n.x, n.x_dot, n.theta, n.theta_dot, n.t),
        step.reward,
        step.terminal,
    ))
}

fn parse_algorithms(algo: &str) -> PyResult<Vec<Algorithm>> {
    if algo == "both" {
        return Ok(vec![Algorithm::PrimalDual, Algorithm::ActorCritic]);
    }
    Ok(vec![algo.parse::<Algorithm>().py()?])
}

/// Runs cart-pole trials. Returns `[(algorithm, trial, [reward, ...]), ...]`
/// and writes the per-episode CSV to `out` when given.
#[pyfunction]
#[pyo3(signature = (
    algo = "pd", trials = 10, episodes = 1000, eta_v = 1e-3, eta_pi = 1e-5,
    gamma = 0.99, c = 1.0, hidden = 64, layers = 2, seed = 0, out = None
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    py: Python<'_>,
    algo: &str,
    trials: usize,
    episodes: usize,
    eta_v: f64,
    eta_pi: f64,
    gamma: f64,
    c: f64,
    hidden: usize,
    layers: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> PyResult<Vec<(String, usize, Vec<f64>)>> {
    let config = harness::ExperimentConfig {
        algorithms: parse_algorithms(algo)?,
        trials,
        max_episodes: episodes,
        agent: AgentConfig {
            eta_v,
            eta_pi,
            gamma,
            c,
            ..AgentConfig::default()
        },
        hidden: vec![hidden; layers],
        base_seed: seed,
        output: out,
        threads: None,
    };
    let outcome = py.detach(|| harness::run_experiment(&config)).py()?;
    if let Some(f) = outcome.failures.first() {
        return Err(PyValueError::new_err(format!(
            "{} trial {} failed: {}",
            f.algorithm, f.trial, f.message
        )));
    }
    Ok(outcome
        .records
        .iter()
        .map(|r| (r.algorithm.tag().to_string(), r.trial, r.rewards()))
        .collect())
}

/// Per-episode `(episode, mean, half_std)` for one algorithm of a harness CSV.
#[pyfunction]
fn aggregate_curves(path: PathBuf, algo: &str) -> PyResult<Vec<(usize, f64, f64)>> {
    let algorithm: Algorithm = algo.parse().py()?;
    let records: Vec<_> = harness::load_records(path)
        .py()?
        .into_iter()
        .filter(|r| r.algorithm == algorithm)
        .collect();
    Ok(harness::aggregate_curves(&records)
        .into_iter()
        .map(|p| (p.episode, p.mean, p.half_std))
        .collect())
}

/// Median solve episodes `(pd, ac)` from harness CSV files, unsolved counted as `episode_cap`.
#[pyfunction]
#[pyo3(signature = (pd_path, ac_path, episode_cap = 1000))]
fn compare(pd_path: PathBuf, ac_path: PathBuf, episode_cap: usize) -> PyResult<(f64, f64)> {
    let pick = |path: PathBuf, algorithm: Algorithm| -> PyResult<Vec<harness::RunRecord>> {
        Ok(harness::load_records(path)
            .py()?
            .into_iter()
            .filter(|r| r.algorithm == algorithm)
            .collect())
    };
    let report = harness::compare_report(
        &pick(pd_path, Algorithm::PrimalDual)?,
        &pick(ac_path, Algorithm::ActorCritic)?,
        episode_cap,
    )
    .py()?;
    Ok((
        report.primal_dual.median_solve_episode,
        report.actor_critic.median_solve_episode,
    ))
}

/// Largest relative finite-difference error over `nets` random networks.
#[pyfunction]
#[pyo3(signature = (nets = 20, seed = 0))]
fn run_gradcheck(nets: usize, seed: u64) -> PyResult<f64> {
    Ok(gradcheck::run_gradcheck(nets, seed).py()?.max_error())
}

#[pymodule]
fn pdrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTabularMdp>()?;
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(policy_from_dual, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_curves, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run_gradcheck, m)?)?;
    Ok(())
}
