use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use greedy_multistep::envs::{sample_episode, Env, EnvSpec, RngSeed, Task};
use greedy_multistep::exact_dp::{optimal_q_exact, value_iteration, DEFAULT_EPS, DEFAULT_MAX_ITER};
use greedy_multistep::harness::{
    parse_policy_set, property_suite, rate_report, render_rates, run_experiment, ExperimentConfig,
    OperatorKind, SuiteOptions,
};
use greedy_multistep::mdp::{parse_mdp, parse_trajectories, write_mdp, write_trajectories, QTable};
use greedy_multistep::model_free::{
    offline_train, run_learner, Algorithm, EpsilonSchedule, LearnerConfig, RunMetrics, StepLimit,
};

#[derive(Parser)]
#[command(
    name = "gms",
    version,
    about = "Greedy multi-step value iteration and Q-learning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterate an exact operator and log residuals (`iter,residual,wall_ns`).
    Solve(SolveArgs),
    /// Train an online learner and log episodes.
    Train(TrainArgs),
    /// Train from a trajectory log without interaction.
    Offline(OfflineArgs),
    /// Run an experiment config, or compare operator contraction rates.
    Bench(BenchArgs),
    /// Run the property suite; exit code 1 on any violation.
    Props(PropsArgs),
    /// Chosen-step histogram of greedy multi-step Q-learning.
    Stats(StatsArgs),
    /// Write a generated environment in the text MDP format.
    Export(ExportArgs),
    /// Sample episodes into a trajectory log.
    Collect(CollectArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// MDP file or generator (`gridworld:5`, `random:1:10:3:2`, ...).
    #[arg(long)]
    mdp: String,
    #[arg(long, default_value = "g", value_parser = parse_from_str::<OperatorKind>)]
    operator: OperatorKind,
    /// Behavior policies, e.g. `uniform`, `chain`, `optimal+random:2:7`.
    #[arg(long, default_value = "uniform")]
    policies: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnerArgs {
    #[arg(long, value_parser = parse_from_str::<Algorithm>, default_value = "gm")]
    algo: Algorithm,
    #[arg(long)]
    alpha: Option<f64>,
    /// Overrides the environment's discount.
    #[arg(long)]
    gamma: Option<f64>,
    /// Constant exploration rate; the default decays from 0.1 to 0.01.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Depth limit: a number or `to-episode-end`.
    #[arg(long, value_parser = parse_from_str::<StepLimit>)]
    max_step: Option<StepLimit>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    q_init: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every suffix in the trajectory store.
    #[arg(long)]
    unbounded_store: bool,
    #[arg(long)]
    store_capacity: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    stop_when_solved: bool,
}

impl LearnerArgs {
    fn config(&self, default_alpha: f64) -> LearnerConfig {
        let mut c = LearnerConfig::new(self.algo);
        c.alpha = self.alpha.unwrap_or(default_alpha);
        c.gamma = self.gamma;
        if let Some(e) = self.epsilon {
            c.epsilon = EpsilonSchedule::constant(e);
        }
        c.max_step = self.max_step.unwrap_or(c.max_step);
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.q_init = self.q_init;
        c.seed = RngSeed(self.seed);
        if self.unbounded_store {
            c.store_capacity = None;
        } else if self.store_capacity.is_some() {
            c.store_capacity = self.store_capacity;
        }
        c.eval_every = self.eval_every.unwrap_or(c.eval_every);
        c.stop_when_solved = self.stop_when_solved;
        c
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Generator or MDP file.
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Per-episode CSV: `episode,return,steps,solved,mean_chosen_step`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OfflineArgs {
    #[arg(long)]
    env: String,
    /// Trajectory log (see `collect`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 100)]
    passes: usize,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Per-pass CSV: `pass,max_change,solved`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config (`[section]` / `key = value`).
    #[arg(long, conflicts_with = "env")]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Without a config: compare operators on this MDP.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value = "b,bn,g", value_delimiter = ',', value_parser = parse_from_str::<OperatorKind>)]
    operators: Vec<OperatorKind>,
    #[arg(long, default_value = "uniform")]
    policies: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
    /// Residual CSV for the operator comparison: `operator,iter,residual`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PropsArgs {
    /// Random `(q, q')` pairs per MDP and horizon.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    /// Run the battery at this discount instead of each MDP's own.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, default_value = "gridworld:10")]
    env: String,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Histogram CSV: `step,count`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Behavior policy spec; the first policy of the set is used.
    #[arg(long, default_value = "uniform")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_from_str<T>(s: &str) -> std::result::Result<T, String>
where
    T: std::str::FromStr<Err = greedy_multistep::Error>,
{
    s.parse()
        .map_err(|e: greedy_multistep::Error| e.to_string())
}

/// A generator name, or a path to an MDP file (start state 0).
fn load_env(spec: &str) -> Result<Env> {
    if let Ok(g) = spec.parse::<EnvSpec>() {
        return Ok(g.build()?);
    }
    let path = Path::new(spec);
    if !path.exists() {
        bail!("`{spec}` is neither a generator nor an existing file");
    }
    let mdp = parse_mdp(&fs::read_to_string(path).with_context(|| format!("reading {spec}"))?)?;
    let cap = 10 * mdp.num_states();
    Ok(Env::new(mdp, Task::Random, 0, cap)?)
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn csv_text<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn solve(a: SolveArgs) -> Result<bool> {
    let env = load_env(&a.mdp)?;
    let mdp = env.mdp();
    let policies = parse_policy_set(&a.policies, mdp)?;
    let op = a.operator.spec(&policies, a.n);
    op.check(mdp)?;
    let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let run = value_iteration(mdp, &op, &q0, a.eps, a.max_iter)?;
    if let Some(out) = &a.out {
        let rows = run
            .residuals
            .iter()
            .zip(&run.wall_ns)
            .enumerate()
            .map(|(i, (r, w))| vec![(i + 1).to_string(), r.to_string(), w.to_string()]);
        emit(
            Some(out),
            &csv_text(&["iter", "residual", "wall_ns"], rows)?,
        )?;
    }
    let err = run.values.max_abs_diff(&optimal_q_exact(mdp)?);
    println!(
        "{}: {} iterations, converged {}, final residual {:.3e}, |Q - Q*| {:.3e}",
        greedy_multistep::exact_dp::QOperator::label(&op),
        run.iterations,
        run.converged,
        run.final_residual().unwrap_or(0.0),
        err
    );
    Ok(run.converged)
}

fn print_outcome(m: &RunMetrics) {
    match m.solved_at {
        Some(k) => println!("solved at {k}"),
        None if m.budget_exhausted => println!("not solved within budget"),
        None => println!("no task predicate for this environment"),
    }
}

fn train(a: TrainArgs) -> Result<bool> {
    let env = load_env(&a.env)?;
    let mut cfg = a.learner.config(0.1);
    cfg.episodes = a.episodes;
    let (_, m) = run_learner(&env, &cfg)?;
    if let Some(out) = &a.out {
        let rows = m.episodes.iter().map(|e| {
            vec![
                e.episode.to_string(),
                e.ret.to_string(),
                e.steps.to_string(),
                opt(e.solved),
                opt(e.mean_chosen_step),
            ]
        });
        emit(
            Some(out),
            &csv_text(
                &["episode", "return", "steps", "solved", "mean_chosen_step"],
                rows,
            )?,
        )?;
    }
    print_outcome(&m);
    Ok(true)
}

fn offline(a: OfflineArgs) -> Result<bool> {
    let env = load_env(&a.env)?;
    let text =
        fs::read_to_string(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let data = parse_trajectories(&text)?;
    let cfg = a.learner.config(1.0);
    let (_, m) = offline_train(&env, &data, &cfg, a.passes)?;
    if let Some(out) = &a.out {
        let rows = m
            .passes
            .iter()
            .map(|p| vec![p.pass.to_string(), p.max_change.to_string(), opt(p.solved)]);
        emit(
            Some(out),
            &csv_text(&["pass", "max_change", "solved"], rows)?,
        )?;
    }
    print_outcome(&m);
    Ok(true)
}

fn bench(a: BenchArgs) -> Result<bool> {
    if let Some(path) = &a.config {
        let mut cfg = ExperimentConfig::from_ini_file(path)?;
        if a.out_dir.is_some() {
            cfg.output_dir = a.out_dir.clone();
        }
        let report = run_experiment(&cfg)?;
        print!("{}", report.render());
        return Ok(report.passed());
    }
    let Some(spec) = &a.env else {
        bail!("bench needs --config or --env")
    };
    let env = load_env(spec)?;
    let mdp = env.mdp();
    let policies = parse_policy_set(&a.policies, mdp)?;
    let specs: Vec<_> = a.operators.iter().map(|k| k.spec(&policies, a.n)).collect();
    let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let q_star = optimal_q_exact(mdp)?;
    let rows = rate_report(mdp, &specs, &q0, a.eps, Some(&q_star))?;
    print!("{}", render_rates(&rows));
    if let Some(out) = &a.out {
        let lines = rows.iter().flat_map(|r| {
            r.residuals
                .iter()
                .enumerate()
                .map(|(i, x)| vec![r.label.clone(), (i + 1).to_string(), x.to_string()])
                .collect::<Vec<_>>()
        });
        emit(
            Some(out),
            &csv_text(&["operator", "iter", "residual"], lines)?,
        )?;
    }
    Ok(rows.iter().all(|r| r.converged))
}

fn props(a: PropsArgs) -> Result<bool> {
    let report = property_suite(&SuiteOptions {
        pairs: a.pairs,
        gamma: a.gamma,
        seed: a.seed,
        greedy: None,
    })?;
    print!("{report}");
    Ok(report.passed())
}

fn stats(a: StatsArgs) -> Result<bool> {
    let env = load_env(&a.env)?;
    let mut cfg = a.learner.config(0.1);
    if cfg.algorithm != Algorithm::GreedyMultiStep {
        bail!("chosen-step statistics need --algo gm");
    }
    cfg.episodes = a.episodes;
    let (_, m) = run_learner(&env, &cfg)?;
    let hist = m.chosen_step_histogram();
    let total = m.chosen_steps.len().max(1) as f64;
    for (step, count) in &hist {
        println!(
            "{step:>4} {count:>8} {:>6.2}%",
            100.0 * *count as f64 / total
        );
    }
    if let Some((first, last)) = m.chosen_step_trend(0.1) {
        println!("mean chosen step: first 10% {first:.3}, last 10% {last:.3}");
    }
    if let Some(out) = &a.out {
        let rows = hist.iter().map(|(s, c)| vec![s.to_string(), c.to_string()]);
        emit(Some(out), &csv_text(&["step", "count"], rows)?)?;
    }
    Ok(true)
}

fn export(a: ExportArgs) -> Result<bool> {
    let env = load_env(&a.env)?;
    emit(a.out.as_deref(), &write_mdp(env.mdp()))?;
    Ok(true)
}

fn collect(a: CollectArgs) -> Result<bool> {
    let mut env = load_env(&a.env)?;
    let set = parse_policy_set(&a.policy, env.mdp())?;
    let pi = set.get(0).clone();
    let mut rng = RngSeed(a.seed).rng();
    let data: Vec<_> = (0..a.episodes)
        .map(|_| sample_episode(&mut env, &pi, &mut rng))
        .collect();
    emit(a.out.as_deref(), &write_trajectories(&data))?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Offline(a) => offline(a),
        Command::Bench(a) => bench(a),
        Command::Props(a) => props(a),
        Command::Stats(a) => stats(a),
        Command::Export(a) => export(a),
        Command::Collect(a) => collect(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
