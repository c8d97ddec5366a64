use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdrl_core::agents::{AgentConfig, Algorithm};
use pdrl_core::duality::{
    complementary_slackness_residual, greedy_policy, occupancy_measure, policy_from_dual, value_iteration,
};
use pdrl_core::gradcheck::{run_gradcheck, FD_STEP};
use pdrl_core::harness::{
    aggregate_curves, compare_report, load_records, run_experiment, sweep_learning_rates, sweep_to_csv,
    ExperimentConfig, RunRecord,
};
use pdrl_core::mdp::TabularMdp;
use pdrl_core::tabular_pd::{run_primal_dual, PdConfig, PdState};

#[derive(Parser)]
#[command(name = "pdrl", version, about = "Primal-dual policy learning toolkit")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a tabular instance exactly (value iteration + LP dual).
    SolveTabular {
        instance: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Run exact-gradient primal-dual on a tabular instance and print the duality gap per window as CSV.
    PdTabular(PdTabularArgs),
    /// Train primal-dual and/or actor-critic agents on cart-pole.
    Train(TrainArgs),
    /// Compare solve statistics of two harness CSV files.
    Compare {
        #[arg(long)]
        pd: PathBuf,
        #[arg(long)]
        ac: PathBuf,
        /// Episode count assigned to unsolved trials.
        #[arg(long, default_value_t = 1000)]
        episode_cap: usize,
        /// Also write per-trial solve episodes as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct PdTabularArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    eta_v: f64,
    #[arg(long, default_value_t = 0.05)]
    eta_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 100_000)]
    iters: usize,
    /// Steps per reported gap.
    #[arg(long, default_value_t = 1000)]
    window: usize,
    /// Random start (V and mu) from this seed; otherwise V = 0 and mu uniform.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoChoice {
    Pd,
    Ac,
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = AlgoChoice::Pd)]
    algo: AlgoChoice,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 1e-3)]
    eta_v: f64,
    #[arg(long, default_value_t = 1e-5)]
    eta_pi: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Hidden layer width.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Per-episode CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mean/band curve CSV output.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Sweep these value step sizes (comma separated) instead of a single run.
    #[arg(long, value_delimiter = ',')]
    sweep_eta_v: Vec<f64>,
    /// Sweep these policy step sizes (comma separated) instead of a single run.
    #[arg(long, value_delimiter = ',')]
    sweep_eta_pi: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    let result = match cli.command {
        Command::SolveTabular { instance, tol } => solve_tabular(&instance, tol),
        Command::PdTabular(args) => pd_tabular(&args),
        Command::Train(args) => train(&args),
        Command::Compare {
            pd,
            ac,
            episode_cap,
            out,
        } => compare(&pd, &ac, episode_cap, out.as_deref()),
        Command::Gradcheck {
            nets,
            seed,
            tolerance,
        } => gradcheck(nets, seed, tolerance),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CliResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn load_instance(path: &Path) -> Result<TabularMdp, Box<dyn std::error::Error>> {
    TabularMdp::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn solve_tabular(path: &Path, tol: f64) -> CliResult {
    let mdp = load_instance(path)?;
    let (v, iters) = value_iteration(&mdp, tol, 10_000_000)?;
    let policy = greedy_policy(&mdp, &v);
    let mu = occupancy_measure(&mdp, &policy)?;
    let ret = mdp.evaluate_policy_return(&policy)?;
    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.10}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!(
        "states {} actions {} gamma {}",
        mdp.n_states, mdp.n_actions, mdp.gamma
    );
    println!("value iteration backups {iters}");
    println!("V* {}", fmt(v.as_slice()));
    let actions: Vec<String> = policy.argmax_actions().iter().map(|a| a.to_string()).collect();
    println!("greedy actions {}", actions.join(" "));
    println!("optimal return {ret:.10}");
    for (s, row) in mu.mu.iter().enumerate() {
        println!("mu*[{s}] {}", fmt(row));
    }
    println!(
        "complementary slackness residual {:.3e}",
        complementary_slackness_residual(&mdp, &v, &mu)
    );
    Ok(ExitCode::SUCCESS)
}

fn pd_tabular(args: &PdTabularArgs) -> CliResult {
    let mdp = load_instance(&args.instance)?;
    let config = PdConfig {
        eta_v: args.eta_v,
        eta_mu: args.eta_mu,
        c: args.c,
    };
    for (name, value) in [("eta-v", config.eta_v), ("eta-mu", config.eta_mu)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(format!("--{name} must be a positive number, got {value}").into());
        }
    }
    if !(config.c.is_finite() && config.c >= 0.0) {
        return Err(format!("--c must be non-negative, got {}", config.c).into());
    }
    if args.window == 0 {
        return Err("--window must be at least 1".into());
    }
    let start = match args.seed {
        Some(seed) => PdState::random(&mdp, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => PdState::initial(&mdp),
    };
    let (state, gaps) = run_primal_dual(&mdp, start, &config, args.iters, args.window)?;

    let mut csv = String::from("step,duality_gap\n");
    for (step, gap) in &gaps {
        csv.push_str(&format!("{step},{gap}\n"));
    }
    write_output(args.out.as_deref(), &csv)?;

    let (v_star, _) = value_iteration(&mdp, 1e-12, 10_000_000)?;
    let optimal = greedy_policy(&mdp, &v_star).argmax_actions();
    let learned = policy_from_dual(&state.mu).argmax_actions();
    eprintln!(
        "learned greedy actions {:?}, optimal {:?}: {}",
        learned,
        optimal,
        if learned == optimal { "match" } else { "differ" }
    );
    Ok(ExitCode::SUCCESS)
}

fn train(args: &TrainArgs) -> CliResult {
    let algorithms = match args.algo {
        AlgoChoice::Pd => vec![Algorithm::PrimalDual],
        AlgoChoice::Ac => vec![Algorithm::ActorCritic],
        AlgoChoice::Both => vec![Algorithm::PrimalDual, Algorithm::ActorCritic],
    };
    if args.layers == 0 {
        return Err("--layers must be at least 1".into());
    }
    let config = ExperimentConfig {
        algorithms,
        trials: args.trials,
        max_episodes: args.episodes,
        agent: AgentConfig {
            eta_v: args.eta_v,
            eta_pi: args.eta_pi,
            gamma: args.gamma,
            c: args.c,
            ..AgentConfig::default()
        },
        hidden: vec![args.hidden; args.layers],
        base_seed: args.seed,
        output: args.out.clone(),
        threads: args.threads,
    };
    config.validate()?;

    if !args.sweep_eta_v.is_empty() || !args.sweep_eta_pi.is_empty() {
        let eta_v = if args.sweep_eta_v.is_empty() {
            vec![args.eta_v]
        } else {
            args.sweep_eta_v.clone()
        };
        let eta_pi = if args.sweep_eta_pi.is_empty() {
            vec![args.eta_pi]
        } else {
            args.sweep_eta_pi.clone()
        };
        let results = sweep_learning_rates(
            &ExperimentConfig {
                output: None,
                ..config
            },
            &eta_v,
            &eta_pi,
        )?;
        write_output(args.out.as_deref(), &sweep_to_csv(&results))?;
        return Ok(ExitCode::SUCCESS);
    }

    let outcome = run_experiment(&config)?;
    for f in &outcome.failures {
        eprintln!("{} trial {} failed: {}", f.algorithm, f.trial, f.message);
    }
    if args.out.is_none() {
        print!("{}", pdrl_core::harness::records_to_csv(&outcome.records)?);
    }
    if let Some(path) = &args.curves {
        let mut text = String::from("algorithm,episode,mean,half_std\n");
        for &algorithm in &config.algorithms {
            let records: Vec<RunRecord> = outcome
                .records
                .iter()
                .filter(|r| r.algorithm == algorithm)
                .cloned()
                .collect();
            for p in aggregate_curves(&records) {
                text.push_str(&format!("{algorithm},{},{},{}\n", p.episode, p.mean, p.half_std));
            }
        }
        fs::write(path, text)?;
    }
    if outcome.records.is_empty() {
        return Err("every trial failed".into());
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(pd: &Path, ac: &Path, episode_cap: usize, out: Option<&Path>) -> CliResult {
    let select = |path: &Path, algorithm: Algorithm| -> Result<Vec<RunRecord>, Box<dyn std::error::Error>> {
        let records: Vec<RunRecord> = load_records(path)
            .map_err(|e| format!("{}: {e}", path.display()))?
            .into_iter()
            .filter(|r| r.algorithm == algorithm)
            .collect();
        if records.is_empty() {
            return Err(format!("{}: no `{algorithm}` records", path.display()).into());
        }
        Ok(records)
    };
    let report = compare_report(
        &select(pd, Algorithm::PrimalDual)?,
        &select(ac, Algorithm::ActorCritic)?,
        episode_cap,
    )?;
    println!("{report}");
    if let Some(path) = out {
        fs::write(path, report.to_csv())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(nets: usize, seed: u64, tolerance: f64) -> CliResult {
    let report = run_gradcheck(nets, seed)?;
    println!("central differences, h = {FD_STEP:e}");
    for (i, case) in report.cases.iter().enumerate() {
        println!(
            "net {i:>2} {:?}: value {:.2e}, log-policy {:.2e}",
            case.layer_sizes, case.value_error, case.log_policy_error
        );
    }
    let worst = report.max_error();
    println!("max relative error {worst:.2e} (tolerance {tolerance:e})");
    Ok(if worst <= tolerance {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn write_output(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}
