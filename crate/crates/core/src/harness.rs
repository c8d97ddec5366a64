//! Seeded multi-trial cart-pole experiments and their reduction to solve
//! statistics.
//!
//! Trial `i` of every algorithm draws all of its randomness from seed
//! `base_seed + i`, split into independent streams for network
//! initialization, environment resets and action sampling. Records are
//! written in `(algorithm, trial)` order regardless of which worker finished
//! first, so output bytes do not depend on the thread count.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfig, Algorithm, EpisodeResult};
use crate::envs::{CartPole, Environment};
use crate::error::{Error, Result};

pub const SOLVE_THRESHOLD: f64 = 195.0;
pub const SOLVE_WINDOW: usize = 100;

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACTIONS: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub max_episodes: usize,
    /// Shared hyperparameters; `algorithm` is overridden per run.
    pub agent: AgentConfig,
    pub hidden: Vec<usize>,
    pub base_seed: u64,
    pub output: Option<PathBuf>,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::PrimalDual],
            trials: 10,
            max_episodes: 1000,
            agent: AgentConfig::default(),
            hidden: vec![64, 64],
            base_seed: 0,
            output: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no algorithm selected".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.max_episodes == 0 {
            return Err(Error::InvalidArgument("max_episodes must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be at least 1".into()));
        }
        self.agent.validate()
    }
}

/// All episodes of one trial of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub episodes: Vec<EpisodeResult>,
}

impl RunRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.cumulative_reward).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<TrialFailure>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs one trial on cart-pole.
pub fn run_trial(config: &ExperimentConfig, algorithm: Algorithm, trial: usize) -> Result<RunRecord> {
    let seed = config.base_seed.wrapping_add(trial as u64);
    let agent_config = AgentConfig {
        algorithm,
        ..config.agent
    };
    let mut env = CartPole::new();
    let mut agent = Agent::new(
        env.observation_dim(),
        env.n_actions(),
        &config.hidden,
        agent_config,
        &mut stream(seed, STREAM_INIT),
    )?;
    let mut env_rng = stream(seed, STREAM_ENV);
    let mut action_rng = stream(seed, STREAM_ACTIONS);
    let episodes = (1..=config.max_episodes)
        .map(|e| agent.run_episode(&mut env, e, &mut env_rng, &mut action_rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunRecord {
        algorithm,
        trial,
        episodes,
    })
}

/// Runs every `(algorithm, trial)` pair, streaming finished records to
/// `config.output` in order. A failing trial is reported and the rest
/// continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut writer = match &config.output {
        Some(path) => Some(RecordWriter::create(path)?),
        None => None,
    };
    let jobs: Vec<(Algorithm, usize)> = config
        .algorithms
        .iter()
        .flat_map(|&a| (0..config.trials).map(move |t| (a, t)))
        .collect();
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, jobs.len());

    let next_job = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let mut outcome = ExperimentOutcome::default();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..threads {
            let tx = tx.clone();
            let (jobs, next_job) = (&jobs, &next_job);
            scope.spawn(move || loop {
                let i = next_job.fetch_add(1, Ordering::Relaxed);
                let Some(&(algorithm, trial)) = jobs.get(i) else {
                    break;
                };
                let result = run_trial(config, algorithm, trial);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut flushed = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&flushed) {
                let (algorithm, trial) = jobs[flushed];
                match result {
                    Ok(record) => {
                        if let Some(w) = writer.as_mut() {
                            w.write(&record)?;
                        }
                        outcome.records.push(record);
                    }
                    Err(e) => {
                        log::warn!("{algorithm} trial {trial} failed: {e}");
                        outcome.failures.push(TrialFailure {
                            algorithm,
                            trial,
                            message: e.to_string(),
                        });
                    }
                }
                flushed += 1;
            }
        }
        Ok(())
    })?;
    if let Some(w) = writer {
        w.finish()?;
    }
    Ok(outcome)
}

/// First episode (1-based) whose trailing `window` rewards average at least
/// `threshold`.
pub fn detect_solved(record: &RunRecord, threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    let rewards = record.rewards();
    if rewards.len() < window {
        return None;
    }
    (window..=rewards.len())
        .find(|&end| rewards[end - window..end].iter().sum::<f64>() / window as f64 >= threshold)
        .map(|end| record.episodes[end - 1].episode_index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    /// Half the sample standard deviation (`n - 1` denominator, 0 for one trial).
    pub half_std: f64,
}

/// Per-episode mean and half standard deviation across trials. Trials of
/// different lengths are truncated to the shortest.
pub fn aggregate_curves(records: &[RunRecord]) -> Vec<CurvePoint> {
    let Some(len) = records.iter().map(|r| r.episodes.len()).min() else {
        return Vec::new();
    };
    if records.iter().any(|r| r.episodes.len() != len) {
        log::warn!("ragged trials; truncating curves to {len} episodes");
    }
    // sum in trial order so the result does not depend on input order
    let mut ordered: Vec<&RunRecord> = records.iter().collect();
    ordered.sort_by_key(|r| (r.algorithm, r.trial));
    let n = ordered.len() as f64;
    (0..len)
        .map(|i| {
            let values: Vec<f64> = ordered.iter().map(|r| r.episodes[i].cumulative_reward).collect();
            let mean = values.iter().sum::<f64>() / n;
            let half_std = if ordered.len() > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                0.5 * var.sqrt()
            } else {
                0.0
            };
            CurvePoint {
                episode: ordered[0].episodes[i].episode_index,
                mean,
                half_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub solved: usize,
    /// Median solve episode, counting unsolved trials as the episode cap.
    pub median_solve_episode: f64,
    /// Mean solve episode over solved trials only.
    pub mean_solve_episode: Option<f64>,
    pub solve_episodes: Vec<Option<usize>>,
}

impl AlgorithmSummary {
    pub fn solve_rate(&self) -> f64 {
        self.solved as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub primal_dual: AlgorithmSummary,
    pub actor_critic: AlgorithmSummary,
    pub episode_cap: usize,
    pub threshold: f64,
    pub window: usize,
}

impl ComparisonReport {
    /// Primal-dual median minus actor-critic median; negative favors primal-dual.
    pub fn median_difference(&self) -> f64 {
        self.primal_dual.median_solve_episode - self.actor_critic.median_solve_episode
    }

    /// `algorithm,trial,solve_episode` rows, empty field when unsolved.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm,trial,solve_episode\n");
        for summary in [&self.primal_dual, &self.actor_critic] {
            for (trial, e) in summary.solve_episodes.iter().enumerate() {
                let e = e.map(|e| e.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{trial},{e}\n", summary.algorithm));
            }
        }
        out
    }
}

impl std::fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "solve criterion: mean reward >= {} over {} episodes (unsolved counted as {})",
            self.threshold, self.window, self.episode_cap
        )?;
        for s in [&self.primal_dual, &self.actor_critic] {
            let mean = s
                .mean_solve_episode
                .map_or_else(|| "n/a".to_string(), |m| format!("{m:.1}"));
            writeln!(
                f,
                "{:>3}: solved {}/{} ({:.0}%), median solve episode {:.1}, mean over solved {}",
                s.algorithm.tag(),
                s.solved,
                s.trials,
                100.0 * s.solve_rate(),
                s.median_solve_episode,
                mean
            )?;
        }
        write!(f, "median difference (pd - ac): {:.1}", self.median_difference())
    }
}

pub fn summarize(
    algorithm: Algorithm,
    records: &[RunRecord],
    threshold: f64,
    window: usize,
    episode_cap: usize,
) -> AlgorithmSummary {
    let mut ordered: Vec<&RunRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.trial);
    let solve_episodes: Vec<Option<usize>> = ordered
        .iter()
        .map(|r| detect_solved(r, threshold, window))
        .collect();
    let solved: Vec<f64> = solve_episodes.iter().flatten().map(|&e| e as f64).collect();
    let capped: Vec<f64> = solve_episodes
        .iter()
        .map(|e| e.map_or(episode_cap as f64, |e| e as f64))
        .collect();
    AlgorithmSummary {
        algorithm,
        trials: ordered.len(),
        solved: solved.len(),
        median_solve_episode: median(&capped),
        mean_solve_episode: (!solved.is_empty()).then(|| solved.iter().sum::<f64>() / solved.len() as f64),
        solve_episodes,
    }
}

/// Solve statistics for both algorithms with the default criterion.
pub fn compare_report(pd: &[RunRecord], ac: &[RunRecord], episode_cap: usize) -> Result<ComparisonReport> {
    if pd.is_empty() || ac.is_empty() {
        return Err(Error::InvalidArgument(
            "both record sets must be non-empty".into(),
        ));
    }
    Ok(ComparisonReport {
        primal_dual: summarize(
            Algorithm::PrimalDual,
            pd,
            SOLVE_THRESHOLD,
            SOLVE_WINDOW,
            episode_cap,
        ),
        actor_critic: summarize(
            Algorithm::ActorCritic,
            ac,
            SOLVE_THRESHOLD,
            SOLVE_WINDOW,
            episode_cap,
        ),
        episode_cap,
        threshold: SOLVE_THRESHOLD,
        window: SOLVE_WINDOW,
    })
}

/// One grid point of a learning-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub eta_v: f64,
    pub eta_pi: f64,
    pub summaries: Vec<AlgorithmSummary>,
    /// Mean reward over the last `SOLVE_WINDOW` episodes, per algorithm.
    pub final_mean_reward: Vec<f64>,
}

/// Runs `config` at every `(eta_v, eta_pi)` pair of the grid. `config.output`
/// is ignored; per-episode records are not kept.
pub fn sweep_learning_rates(
    config: &ExperimentConfig,
    eta_v: &[f64],
    eta_pi: &[f64],
) -> Result<Vec<SweepResult>> {
    if eta_v.is_empty() || eta_pi.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let mut results = Vec::with_capacity(eta_v.len() * eta_pi.len());
    for &ev in eta_v {
        for &ep in eta_pi {
            let point = ExperimentConfig {
                agent: AgentConfig {
                    eta_v: ev,
                    eta_pi: ep,
                    ..config.agent
                },
                output: None,
                ..config.clone()
            };
            let outcome = run_experiment(&point)?;
            let mut summaries = Vec::new();
            let mut final_mean_reward = Vec::new();
            for &algorithm in &config.algorithms {
                let records: Vec<RunRecord> = outcome
                    .records
                    .iter()
                    .filter(|r| r.algorithm == algorithm)
                    .cloned()
                    .collect();
                summaries.push(summarize(
                    algorithm,
                    &records,
                    SOLVE_THRESHOLD,
                    SOLVE_WINDOW,
                    config.max_episodes,
                ));
                let tails: Vec<f64> = records
                    .iter()
                    .flat_map(|r| {
                        let start = r.episodes.len().saturating_sub(SOLVE_WINDOW);
                        r.episodes[start..].iter().map(|e| e.cumulative_reward)
                    })
                    .collect();
                final_mean_reward.push(tails.iter().sum::<f64>() / tails.len().max(1) as f64);
            }
            log::info!("sweep eta_v={ev} eta_pi={ep} done");
            results.push(SweepResult {
                eta_v: ev,
                eta_pi: ep,
                summaries,
                final_mean_reward,
            });
        }
    }
    Ok(results)
}

/// `eta_v,eta_pi,algorithm,trials,solved,median_solve_episode,final_mean_reward` rows.
pub fn sweep_to_csv(results: &[SweepResult]) -> String {
    let mut out =
        String::from("eta_v,eta_pi,algorithm,trials,solved,median_solve_episode,final_mean_reward\n");
    for r in results {
        for (s, m) in r.summaries.iter().zip(&r.final_mean_reward) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.eta_v, r.eta_pi, s.algorithm, s.trials, s.solved, s.median_solve_episode, m
            ));
        }
    }
    out
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    algorithm: Algorithm,
    trial: usize,
    episode: usize,
    reward: f64,
    steps: usize,
}

/// Streams records as `algorithm,trial,episode,reward,steps` rows.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl RecordWriter<std::fs::File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(std::fs::File::create(path)?))
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(inner),
        }
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<()> {
        for e in &record.episodes {
            self.inner.serialize(CsvRow {
                algorithm: record.algorithm,
                trial: record.trial,
                episode: e.episode_index,
                reward: e.cumulative_reward,
                steps: e.steps,
            })?;
        }
        self.inner.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = RecordWriter::new(Vec::new());
    for r in records {
        w.write(r)?;
    }
    let bytes = w.finish()?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses harness CSV back into records, grouping consecutive rows of the
/// same `(algorithm, trial)`.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["algorithm", "trial", "episode", "reward", "steps"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut records: Vec<RunRecord> = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        let episode = EpisodeResult {
            episode_index: row.episode,
            cumulative_reward: row.reward,
            steps: row.steps,
        };
        match records.last_mut() {
            Some(r) if r.algorithm == row.algorithm && r.trial == row.trial => {
                if r.episodes.last().map(|e| e.episode_index + 1) != Some(row.episode) {
                    return Err(Error::Parse {
                        line: i + 2,
                        message: "episode indices must be contiguous".into(),
                    });
                }
                r.episodes.push(episode)
            }
            _ => {
                if row.episode != 1 {
                    return Err(Error::Parse {
                        line: i + 2,
                        message: "trial must start at episode 1".into(),
                    });
                }
                records.push(RunRecord {
                    algorithm: row.algorithm,
                    trial: row.trial,
                    episodes: vec![episode],
                })
            }
        }
    }
    Ok(records)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    read_records(std::fs::File::open(path)?)
}
