//! Command-line front end: synthetic-lab training and comparison, agent
//! evaluation, offline reward scoring and metrics reports.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tablemind::agent::{batch_run, HttpBackend, PolicyBackend, ScriptedFixture};
use tablemind::config::RunConfig;
use tablemind::eval::report;
use tablemind::exec::{CodeExecutor, MockExecutor, SandboxExecutor};
use tablemind::jsonl;
use tablemind::lab::{compare_modes, train, write_metrics_csv, StepMetrics, TrainRunConfig};
use tablemind::model::{TableTask, Trajectory};
use tablemind::rapo::OptimizerMode;
use tablemind::reward::score;

#[derive(Parser)]
#[command(name = "tablemind", version, about = "Table reasoning agent: rewards, RAPO training lab and evaluation")]
struct Cli {
    /// JSON run configuration; every section is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for generated files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy policy on the synthetic suite and write a metrics CSV.
    Train(TrainArgs),
    /// Matched RAPO and GRPO runs over several seeds.
    Compare {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Run the agent over a dataset and write trajectories.
    Eval(EvalArgs),
    /// Score a trajectory JSONL against a dataset JSONL.
    Reward {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Global training step used for the tool-reward decay.
        #[arg(long, default_value_t = 0)]
        step: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge metrics CSVs into one curve table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rapo,
    Grpo,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    tasks_per_batch: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps_low: Option<f64>,
    #[arg(long)]
    eps_high: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c_penalty: Option<f64>,
    /// Drop the tool term from the reward.
    #[arg(long)]
    no_tool_reward: bool,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BackendKind {
    Scripted,
    Http,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ExecutorKind {
    Mock,
    Sandbox,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    /// Scripted responses, one `{"task_id", "responses"}` object per line.
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    executor: ExecutorKind,
    #[arg(long)]
    max_turns: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

fn train_config(base: &RunConfig, seed: Option<u64>, a: &TrainArgs) -> TrainRunConfig {
    let mut c = base.train.clone();
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(m) = a.mode {
        c.optimizer_mode = match m {
            Mode::Rapo => OptimizerMode::Rapo,
            Mode::Grpo => OptimizerMode::Grpo,
        };
    }
    let set = |dst: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    c.steps = a.steps.unwrap_or(c.steps);
    c.group_size = a.group_size.unwrap_or(c.group_size);
    c.tasks_per_batch = a.tasks_per_batch.unwrap_or(c.tasks_per_batch);
    set(&mut c.learning_rate, a.learning_rate);
    set(&mut c.temperature, a.temperature);
    set(&mut c.rapo.alpha, a.alpha);
    set(&mut c.rapo.eps_low, a.eps_low);
    set(&mut c.rapo.eps_high, a.eps_high);
    set(&mut c.reward.rho, a.rho);
    set(&mut c.reward.beta, a.beta);
    set(&mut c.reward.c_penalty, a.c_penalty);
    if a.no_tool_reward {
        c.reward.enable_tool_reward = false;
    }
    c
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    write_metrics_csv(metrics, create(path)?).with_context(|| format!("writing {}", path.display()))
}

fn run_train(cli: &Cli, base: &RunConfig, args: &TrainArgs) -> Result<()> {
    let cfg = train_config(base, cli.seed, args);
    let (metrics, accuracy) = match args.precision {
        Precision::F64 => train::<f64>(&cfg).map(|o| (o.metrics, o.final_oracle_accuracy))?,
        Precision::F32 => train::<f32>(&cfg).map(|o| (o.metrics, o.final_oracle_accuracy))?,
    };
    let path = cli.out_dir.join(format!("metrics_{}_seed{}.csv", cfg.optimizer_mode.as_str(), cfg.seed));
    write_metrics(&path, &metrics)?;
    let last = metrics.last().map_or(0.0, |m| m.mean_reward);
    println!(
        "{} seed {}: {} steps, final mean reward {last:.4}, greedy accuracy {accuracy:.3}",
        cfg.optimizer_mode.as_str(),
        cfg.seed,
        metrics.len()
    );
    println!("metrics: {}", path.display());
    Ok(())
}

fn run_compare(cli: &Cli, base: &RunConfig, args: &TrainArgs, seeds: usize) -> Result<()> {
    if args.precision == Precision::F32 {
        bail!("compare runs in f64 only");
    }
    let cfg = train_config(base, cli.seed, args);
    let (report, metrics) = compare_modes(&cfg, seeds)?;
    let csv_path = cli.out_dir.join("compare_metrics.csv");
    write_metrics(&csv_path, &metrics)?;
    let json_path = cli.out_dir.join("compare_summary.json");
    serde_json::to_writer_pretty(create(&json_path)?, &report)?;
    println!("{:>6} {:>10} {:>10} {:>9} {:>9} {:>9} {:>9}", "seed", "rapo_auc", "grpo_auc", "rapo_acc", "grpo_acc", "rapo_tool", "grpo_tool");
    for s in &report.seeds {
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
            s.seed,
            s.rapo_auc,
            s.grpo_auc,
            s.rapo_final_accuracy,
            s.grpo_final_accuracy,
            s.rapo_tail_tool_ratio,
            s.grpo_tail_tool_ratio
        );
    }
    println!("RAPO AUC >= GRPO AUC on {:.0}% of seeds", 100.0 * report.rapo_ge_fraction);
    println!("metrics: {}\nsummary: {}", csv_path.display(), json_path.display());
    Ok(())
}

fn run_eval(cli: &Cli, base: &RunConfig, args: &EvalArgs) -> Result<()> {
    let dataset: Vec<TableTask> =
        jsonl::read_path(&args.dataset).with_context(|| format!("reading dataset {}", args.dataset.display()))?;
    let mut episode = base.episode.clone();
    episode.max_turns = args.max_turns.unwrap_or(episode.max_turns);
    episode.temperature = args.temperature.unwrap_or(episode.temperature);

    let fixture = match (args.backend, &args.fixture) {
        (BackendKind::Scripted, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading fixture {}", path.display()))?;
            Some(ScriptedFixture::from_jsonl(&text).with_context(|| format!("parsing fixture {}", path.display()))?)
        }
        (BackendKind::Scripted, None) => bail!("--backend scripted needs --fixture"),
        (BackendKind::Http, _) => None,
    };
    let backend_for = |t: &TableTask| -> Result<Box<dyn PolicyBackend>, _> {
        match &fixture {
            Some(f) => Ok(Box::new(f.backend_for(&t.id)) as Box<dyn PolicyBackend>),
            None => HttpBackend::new(base.http.clone()).map(|b| Box::new(b) as Box<dyn PolicyBackend>),
        }
    };
    let executor_for = || -> Result<Box<dyn CodeExecutor>, String> {
        Ok(match args.executor {
            ExecutorKind::Mock => Box::new(MockExecutor::new()),
            ExecutorKind::Sandbox => Box::new(SandboxExecutor::new(base.sandbox.clone())),
        })
    };
    let out = batch_run(&dataset, &base.prompt, backend_for, executor_for, &episode, args.parallelism)?;

    let path = args.out.clone().unwrap_or_else(|| cli.out_dir.join("trajectories.jsonl"));
    jsonl::write_to(create(&path)?, &out.trajectories).with_context(|| format!("writing {}", path.display()))?;
    for f in &out.failures {
        eprintln!("task {} incomplete: {}", f.task_id, f.message);
    }
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    println!("trajectories: {}", path.display());
    Ok(())
}

fn run_reward(cli: &Cli, base: &RunConfig, trajectories: &Path, dataset: &Path, step: u64, out: Option<&Path>) -> Result<()> {
    let tasks: Vec<TableTask> =
        jsonl::read_path(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let mut trajs: Vec<Trajectory> =
        jsonl::read_path(trajectories).with_context(|| format!("reading trajectories {}", trajectories.display()))?;
    let reward = &base.train.reward;
    reward.validate()?;
    for t in &mut trajs {
        let task = tasks
            .iter()
            .find(|task| task.id == t.task_id)
            .with_context(|| format!("trajectory for unknown task {:?}", t.task_id))?;
        t.reward = Some(score(t, task, step, reward));
    }
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cli.out_dir.join("scored.jsonl"));
    jsonl::write_to(create(&path)?, &trajs).with_context(|| format!("writing {}", path.display()))?;
    let mean = trajs.iter().filter_map(Trajectory::total_reward).sum::<f64>() / trajs.len().max(1) as f64;
    println!("scored {} trajectories at step {step}, mean total reward {mean:.4}", trajs.len());
    println!("scored: {}", path.display());
    Ok(())
}

fn run_report(cli: &Cli, inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let merged = report(inputs)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cli.out_dir.join("report.csv"));
    merged.write_csv(create(&path)?)?;
    print!("{}", merged.render_table());
    println!("report: {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Train(a) => run_train(cli, &base, a),
        Command::Compare { train, seeds } => run_compare(cli, &base, train, *seeds),
        Command::Eval(a) => run_eval(cli, &base, a),
        Command::Reward { trajectories, dataset, step, out } => {
            run_reward(cli, &base, trajectories, dataset, *step, out.as_deref())
        }
        Command::Report { inputs, out } => run_report(cli, inputs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
