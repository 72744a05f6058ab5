//! `amod` — command-line harness: scenario generation, training,
//! evaluation, zero-shot transfer, solver benchmarking, and timing.
//!
//! Exit codes: 0 success, 1 assertion/oracle failure, 2 usage error,
//! 3 I/O error.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use amod_core::agent::{
    eval_seeds, evaluate_model, load_checkpoint, save_checkpoint, train, EvalSummary, GnnModel,
    PolicyModel, TrainerConfig,
};
use amod_core::baselines::{evaluate_policy, EdPolicy, MlpModel, NoRebalancePolicy};
use amod_core::flow::instances::{random_matching_instance, random_rebalancing_instance};
use amod_core::flow::{
    brute_force_matching, brute_force_rebalancing, solve_matching, solve_rebalancing,
};
use amod_core::gen::{gen_grid, gen_hotspot, gen_irregular, gen_ring};
use amod_core::scenario::Scenario;
use amod_core::sim::{desired_counts, Simulator};
use amod_core::AmodError;

pub const METRICS_HEADER: &str = "episode,reward,served_demand,rebalancing_cost,steps,wall_ms";

#[derive(Parser)]
#[command(name = "amod", about = "Fleet rebalancing toolkit for station-based AMoD systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyKind {
    Gnn,
    Mlp,
    Ed,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Grid,
    Hotspot,
    Ring,
    Irregular,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded scenario JSON file.
    GenerateScenario(GenerateArgs),
    /// Train a policy; writes a metrics CSV and checkpoints.
    Train(TrainArgs),
    /// Evaluate a policy deterministically; writes a JSON summary.
    Evaluate(EvaluateArgs),
    /// Evaluate a checkpoint on a different scenario with no updates.
    Transfer(TransferArgs),
    /// Compare the fast solvers against brute-force oracles.
    BenchSolvers(BenchArgs),
    /// Measure per-decision latency across network sizes.
    Timing(TimingArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: ScenarioKind,
    /// Grid rows (grid/hotspot kinds).
    #[arg(long, default_value_t = 4)]
    rows: usize,
    /// Grid columns (grid/hotspot kinds).
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Station count (ring/irregular kinds).
    #[arg(long, default_value_t = 16)]
    stations: usize,
    #[arg(long, default_value_t = 24)]
    fleet: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output scenario path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "gnn")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16_000)]
    episodes: usize,
    #[arg(long, default_value_t = 0.97)]
    gamma: f64,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    /// Anneal the learning rate linearly to this value over the run.
    #[arg(long)]
    lr_final: Option<f64>,
    /// Planning horizon override (defaults to the scenario's).
    #[arg(long)]
    horizon: Option<usize>,
    /// Reward scale divisor for returns (stabilizes early training).
    #[arg(long, default_value_t = 1.0)]
    reward_scale: f64,
    /// Entropy bonus coefficient for the actor loss.
    #[arg(long, default_value_t = 0.0)]
    entropy_coef: f64,
    /// Disable per-episode advantage standardization.
    #[arg(long, default_value_t = false)]
    raw_advantages: bool,
    /// Generalized-advantage lambda (1.0 = Monte-Carlo).
    #[arg(long, default_value_t = 0.8)]
    gae_lambda: f64,
    /// Episodes per optimizer step (gradient averaging).
    #[arg(long, default_value_t = 1)]
    batch_episodes: usize,
    /// Checkpoint to load instead of fresh initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue a run: load <out>/last.ckpt and append to the metrics CSV.
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Output directory (metrics.csv, last.ckpt, best.ckpt, summary.json).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    eval_episodes: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyKind,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    eval_episodes: usize,
    /// Planning horizon override (defaults to the scenario's).
    #[arg(long)]
    horizon: Option<usize>,
    /// Reference summary JSON for %Dev reporting.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Summary JSON output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    /// Target scenario (different size/topology is the point).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "gnn")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    eval_episodes: usize,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Trials per solver (matching and rebalancing each).
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test fixture: corrupt one objective to exercise the failure path.
    #[arg(long, hide = true, default_value_t = false)]
    inject_mutant: bool,
}

#[derive(Args)]
struct TimingArgs {
    /// Comma-separated station counts (must be perfect squares).
    #[arg(long, value_delimiter = ',', default_values_t = vec![16, 100, 400])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    decisions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Evaluation summary artifact; also consumed as the %Dev reference.
#[derive(Debug, Serialize, Deserialize)]
struct SummaryFile {
    policy: String,
    scenario: String,
    episodes: usize,
    mean_reward: f64,
    sd_reward: f64,
    mean_served_demand: f64,
    sd_served_demand: f64,
    mean_rebalancing_cost: f64,
    sd_rebalancing_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pct_dev_reward: Option<f64>,
}

enum CliError {
    Usage(String),
    Assertion(String),
    Io(String),
}

impl From<AmodError> for CliError {
    fn from(e: AmodError) -> Self {
        match e {
            AmodError::Io(err) => CliError::Io(err.to_string()),
            AmodError::Json(err) => CliError::Io(err.to_string()),
            AmodError::InvalidArgument(msg) => CliError::Usage(msg),
            other => CliError::Assertion(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateScenario(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::BenchSolvers(args) => cmd_bench(args),
        Command::Timing(args) => cmd_timing(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Assertion(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("i/o error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn load_scenario(path: &Path, horizon: Option<usize>) -> Result<Scenario, CliError> {
    let mut s = Scenario::load(path)
        .map_err(|e| CliError::Io(format!("scenario {}: {e}", path.display())))?;
    if let Some(h) = horizon {
        if h == 0 {
            return Err(CliError::Usage("--horizon must be at least 1".into()));
        }
        s.planning_horizon = h;
    }
    Ok(s)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let scenario = match args.kind {
        ScenarioKind::Grid => gen_grid(args.rows, args.cols, args.fleet, args.seed),
        ScenarioKind::Hotspot => gen_hotspot(args.rows, args.cols, args.fleet, args.seed),
        ScenarioKind::Ring => gen_ring(args.stations, args.fleet, args.seed),
        ScenarioKind::Irregular => gen_irregular(args.stations, args.fleet, args.seed),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomic(&args.out, &scenario.to_json()?)?;
    println!(
        "wrote {} ({} stations, fleet {})",
        args.out.display(),
        scenario.n_stations(),
        scenario.fleet_size
    );
    Ok(())
}

fn checkpoint_model(
    path: &Path,
    policy: PolicyKind,
    feature_width: usize,
) -> Result<Box<dyn PolicyModel>, CliError> {
    let params = load_checkpoint(path)
        .map_err(|e| CliError::Io(format!("checkpoint {}: {e}", path.display())))?;
    let is_gnn = params
        .first()
        .map(|p| p.name.starts_with("actor.gcn"))
        .unwrap_or(false);
    match policy {
        PolicyKind::Gnn => {
            if !is_gnn {
                return Err(CliError::Usage(
                    "checkpoint does not contain a gnn model".into(),
                ));
            }
            Ok(Box::new(GnnModel::from_params(params)?))
        }
        PolicyKind::Mlp => {
            if is_gnn {
                return Err(CliError::Usage(
                    "checkpoint contains a gnn model, not an mlp".into(),
                ));
            }
            Ok(Box::new(MlpModel::from_params(params, feature_width)?))
        }
        _ => Err(CliError::Usage(
            "--checkpoint only applies to gnn or mlp policies".into(),
        )),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario, args.horizon)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let metrics_path = args.out.join("metrics.csv");
    let last_path = args.out.join("last.ckpt");
    let best_path = args.out.join("best.ckpt");

    if args.reward_scale <= 0.0 {
        return Err(CliError::Usage("--reward-scale must be positive".into()));
    }
    let config = TrainerConfig {
        gamma: args.gamma,
        lr: args.lr,
        lr_final: args.lr_final,
        episodes: args.episodes,
        reward_scale: args.reward_scale,
        entropy_coef: args.entropy_coef,
        advantage_norm: !args.raw_advantages,
        gae_lambda: args.gae_lambda,
        batch_episodes: args.batch_episodes.max(1),
        seed: args.seed,
        eval_episodes: args.eval_episodes.max(1),
        ..TrainerConfig::default()
    };

    let feature_width = scenario.feature_width();
    let n_stations = scenario.n_stations();
    let mut sim = Simulator::new(scenario, args.seed)?;

    // resume: episode counter = completed metric rows; weights from last.ckpt
    let mut start_episode = 0usize;
    let mut existing_rows = String::new();
    if args.resume {
        let text = std::fs::read_to_string(&metrics_path)
            .map_err(|e| CliError::Io(format!("cannot resume, {}: {e}", metrics_path.display())))?;
        start_episode = text.lines().skip(1).filter(|l| !l.is_empty()).count();
        existing_rows = text;
    }

    let mut model: Box<dyn PolicyModel> = if args.resume {
        checkpoint_model(&last_path, args.policy, feature_width)?
    } else if let Some(path) = &args.checkpoint {
        checkpoint_model(path, args.policy, feature_width)?
    } else {
        match args.policy {
            PolicyKind::Gnn => Box::new(GnnModel::new(feature_width, args.seed)),
            PolicyKind::Mlp => Box::new(MlpModel::new(n_stations, feature_width, args.seed)),
            _ => {
                return Err(CliError::Usage(
                    "only gnn and mlp policies are trainable".into(),
                ))
            }
        }
    };

    let mut csv = String::new();
    if args.resume {
        csv.push_str(&existing_rows);
        if !csv.ends_with('\n') && !csv.is_empty() {
            csv.push('\n');
        }
    } else {
        csv.push_str(METRICS_HEADER);
        csv.push('\n');
    }
    let mut file = std::fs::File::create(&metrics_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", metrics_path.display())))?;
    file.write_all(csv.as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))?;

    let out = train(
        model.as_mut(),
        &mut sim,
        &config,
        start_episode,
        |row, _loss| {
            let line = format!(
                "{},{},{},{},{},{}\n",
                row.episode,
                row.reward,
                row.served_demand,
                row.rebalancing_cost,
                row.steps,
                row.wall_ms
            );
            let _ = file.write_all(line.as_bytes());
        },
        |best_model, _score| {
            let _ = save_checkpoint(best_model.params(), &best_path);
        },
    )?;
    file.flush().map_err(|e| CliError::Io(e.to_string()))?;
    save_checkpoint(model.params(), &last_path)?;

    let steps = sim.scenario().episode_length;
    let summary = evaluate_model(
        model.as_ref(),
        &mut sim,
        &eval_seeds(args.seed, args.eval_episodes.max(1)),
        steps,
    )?;
    let artifact = summarize(
        match args.policy {
            PolicyKind::Gnn => "gnn",
            PolicyKind::Mlp => "mlp",
            _ => unreachable!(),
        },
        sim.scenario().name.clone(),
        &summary,
        None,
    );
    let text = serde_json::to_string_pretty(&artifact).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&args.out.join("summary.json"), &text)?;
    println!(
        "trained {} episodes (from {}), final eval mean reward {:.3}, best eval {:.3}",
        out.metrics.len(),
        start_episode,
        summary.mean_reward,
        out.best_eval_reward
    );
    Ok(())
}

fn summarize(
    policy: &str,
    scenario: String,
    s: &EvalSummary,
    reference: Option<&SummaryFile>,
) -> SummaryFile {
    let pct_dev_reward =
        reference.map(|r| 100.0 * (s.mean_reward - r.mean_reward) / r.mean_reward);
    SummaryFile {
        policy: policy.to_string(),
        scenario,
        episodes: s.episodes,
        mean_reward: s.mean_reward,
        sd_reward: s.sd_reward,
        mean_served_demand: s.mean_served,
        sd_served_demand: s.sd_served,
        mean_rebalancing_cost: s.mean_rebalancing_cost,
        sd_rebalancing_cost: s.sd_rebalancing_cost,
        pct_dev_reward,
    }
}

fn load_reference(path: &Option<PathBuf>) -> Result<Option<SummaryFile>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("reference {}: {e}", p.display())))?;
            let parsed: SummaryFile =
                serde_json::from_str(&text).map_err(|e| CliError::Io(e.to_string()))?;
            Ok(Some(parsed))
        }
    }
}

fn emit_summary(artifact: &SummaryFile, out: &Option<PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(artifact).map_err(|e| CliError::Io(e.to_string()))?;
    match out {
        Some(path) => write_atomic(path, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run_evaluation(
    scenario: Scenario,
    policy: PolicyKind,
    checkpoint: &Option<PathBuf>,
    seed: u64,
    episodes: usize,
    reference: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    if episodes == 0 {
        return Err(CliError::Usage("--eval-episodes must be at least 1".into()));
    }
    let feature_width = scenario.feature_width();
    let name = scenario.name.clone();
    let steps = scenario.episode_length;
    let mut sim = Simulator::new(scenario, seed)?;
    let seeds = eval_seeds(seed, episodes);

    let (label, summary) = match policy {
        PolicyKind::Ed => (
            "ed",
            evaluate_policy(&mut EdPolicy, &mut sim, &seeds, steps)?,
        ),
        PolicyKind::None => (
            "none",
            evaluate_policy(&mut NoRebalancePolicy, &mut sim, &seeds, steps)?,
        ),
        PolicyKind::Gnn | PolicyKind::Mlp => {
            let path = checkpoint.as_ref().ok_or_else(|| {
                CliError::Usage("gnn/mlp evaluation requires --checkpoint".into())
            })?;
            let model = checkpoint_model(path, policy, feature_width)?;
            let label = if policy == PolicyKind::Gnn { "gnn" } else { "mlp" };
            (
                label,
                evaluate_model(model.as_ref(), &mut sim, &seeds, steps)?,
            )
        }
    };
    let reference = load_reference(reference)?;
    let artifact = summarize(label, name, &summary, reference.as_ref());
    emit_summary(&artifact, out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario, args.horizon)?;
    run_evaluation(
        scenario,
        args.policy,
        &args.checkpoint,
        args.seed,
        args.eval_episodes,
        &args.reference,
        &args.out,
    )
}

fn cmd_transfer(args: TransferArgs) -> Result<(), CliError> {
    if !matches!(args.policy, PolicyKind::Gnn | PolicyKind::Mlp) {
        return Err(CliError::Usage(
            "transfer requires a trained gnn or mlp checkpoint".into(),
        ));
    }
    let scenario = load_scenario(&args.scenario, None)?;
    run_evaluation(
        scenario,
        args.policy,
        &Some(args.checkpoint),
        args.seed,
        args.eval_episodes,
        &args.reference,
        &args.out,
    )
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        eprintln!("warning: 0 trials requested; nothing checked");
        println!("bench-solvers: vacuous pass (0 trials)");
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut max_dev = 0.0f64;

    for trial in 0..args.trials {
        let inst = random_matching_instance(&mut rng);
        let fast = solve_matching(&inst.demand, &inst.price, &inst.cost, &inst.idle)?;
        let oracle = brute_force_matching(&inst.demand, &inst.price, &inst.cost, &inst.idle)?;
        let mut fast_obj = fast.weighted_total(&inst.price) - fast.weighted_total(&inst.cost);
        let oracle_obj = oracle.weighted_total(&inst.price) - oracle.weighted_total(&inst.cost);
        if args.inject_mutant && trial == args.trials / 2 {
            fast_obj += 0.25;
        }
        let dev = (fast_obj - oracle_obj).abs();
        max_dev = max_dev.max(dev);
        if dev != 0.0 {
            let dump = serde_json::json!({
                "kind": "matching",
                "trial": trial,
                "demand": &inst.demand,
                "price": &inst.price,
                "cost": &inst.cost,
                "idle": &inst.idle,
                "fast_objective": fast_obj,
                "oracle_objective": oracle_obj,
            });
            eprintln!("{dump}");
            return Err(CliError::Assertion(format!(
                "matching objective mismatch on trial {trial} (deviation {dev})"
            )));
        }
    }

    for trial in 0..args.trials {
        let inst = random_rebalancing_instance(&mut rng);
        let fast = solve_rebalancing(&inst.idle, &inst.desired, &inst.cost)?;
        let oracle = brute_force_rebalancing(&inst.idle, &inst.desired, &inst.cost)?;
        let dev = (fast.weighted_total(&inst.cost) - oracle.weighted_total(&inst.cost)).abs();
        max_dev = max_dev.max(dev);
        if dev != 0.0 {
            let dump = serde_json::json!({
                "kind": "rebalancing",
                "trial": trial,
                "idle": &inst.idle,
                "desired": &inst.desired,
                "cost": &inst.cost,
            });
            eprintln!("{dump}");
            return Err(CliError::Assertion(format!(
                "rebalancing objective mismatch on trial {trial} (deviation {dev})"
            )));
        }
    }

    println!(
        "bench-solvers: {} matching + {} rebalancing trials, max deviation {max_dev}",
        args.trials, args.trials
    );
    Ok(())
}

fn cmd_timing(args: TimingArgs) -> Result<(), CliError> {
    if args.sizes.is_empty() {
        return Err(CliError::Usage("--sizes must not be empty".into()));
    }
    if args.decisions == 0 {
        return Err(CliError::Usage("--decisions must be at least 1".into()));
    }
    let mut csv = String::from("n_stations,median_ms,decisions\n");
    for &n in &args.sizes {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n || side == 0 {
            return Err(CliError::Usage(format!(
                "size {n} is not a perfect square grid"
            )));
        }
        let median = measure_decision_latency(side, args.decisions, args.seed)?;
        csv.push_str(&format!("{n},{median:.6},{}\n", args.decisions));
    }
    match &args.out {
        Some(path) => write_atomic(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

/// Median wall time of one full decision: observe, actor forward, desired
/// counts, rebalancing solve.
fn measure_decision_latency(side: usize, decisions: usize, seed: u64) -> Result<f64, CliError> {
    // fleet held fixed across sizes, matching the granularity sweep setup
    let scenario = gen_grid(side, side, 32, seed)?;
    let n = scenario.n_stations();
    let mut sim = Simulator::new(scenario, seed)?;
    let model = GnnModel::new(sim.scenario().feature_width(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(decisions);
    for _ in 0..decisions {
        let t0 = Instant::now();
        let obs = sim.observe();
        let alpha = model.alpha_values(&obs)?;
        let total: f64 = alpha.iter().sum();
        let action = amod_core::sim::RebalanceAction {
            distribution: alpha.iter().map(|a| a / total).collect(),
        };
        let idle: Vec<i64> = sim.state().idle.clone();
        let desired = desired_counts(&action, &idle);
        let _flow = solve_rebalancing(&idle, &desired, &sim.scenario().network.cost)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        // keep the state moving so we do not time one frozen configuration
        let uniform = amod_core::sim::RebalanceAction::uniform(n);
        sim.step(&uniform)?;
        if sim.is_done() {
            sim.reset(rng.gen())?;
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(samples[samples.len() / 2])
}
