//! `tae`: collect episodes, train, evaluate, report and render.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tae::data::Dataset;
use tae::harness::{
    build_report, collect, evaluate, render_episode, run_pipeline, train, Config, EvalReport, EvalSpec, HarnessError, Method,
    ModelPolicy, Policies, RoundPlan, TaskPlan, TrainHyper,
};
use tae::policy::Task;

#[derive(Parser)]
#[command(name = "tae", version, about = "Tool-as-embodiment manipulation learning")]
struct Cli {
    /// key=value file; flags given on the command line take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run episodes and append them to the store as the next round
    Collect {
        /// comma-separated tasks: grasp, push, grasp_grasp, grasp_push
        #[arg(long)]
        task: String,
        /// random, scripted or ckpt:PATH
        #[arg(long)]
        policy: String,
        /// episodes per task
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        store: PathBuf,
        /// checkpoint whose grasp network picks up tools
        #[arg(long)]
        grasp_ckpt: Option<PathBuf>,
    },
    /// Train a separate (one task) or joint (all tasks) model
    Train {
        #[arg(long)]
        store: PathBuf,
        /// comma-separated tasks or `all`
        #[arg(long)]
        tasks: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure success on fresh episodes
    Eval {
        /// random, scripted or ckpt:PATH
        #[arg(long)]
        method: String,
        #[arg(long)]
        task: String,
        /// episodes that must reach the final step
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// checkpoint whose grasp network picks up tools
        #[arg(long)]
        grasp_ckpt: Option<PathBuf>,
        /// tag the entry as a point of the per-round series
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the benchmark table and round series from evaluation reports
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write graymap images of a stored episode
    Render {
        #[arg(long)]
        episode: String,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// also render this model's Q maps
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Run the four collection rounds, training and the benchmark
    Pipeline {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_tasks(s: &str) -> Result<Vec<Task>, HarnessError> {
    if s.trim() == "all" {
        return Ok(Task::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let t: Task = part.parse().map_err(|_| HarnessError::Usage(format!("unknown task {part:?}")))?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

fn model(path: &Path) -> Result<Method, HarnessError> {
    Ok(Method::Model(Arc::new(ModelPolicy::load(path)?)))
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io(path.to_path_buf(), e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.cmd {
        Cmd::Collect { task, policy, episodes, seed, store, grasp_ckpt } => {
            let main = Method::parse(&policy)?;
            let pickup = match &grasp_ckpt {
                Some(p) => model(p)?,
                None => main.clone(),
            };
            let tasks = parse_tasks(&task)?;
            let mut ds = Dataset::open(&store)?;
            let plan = RoundPlan {
                round_id: ds.last_round() + 1,
                tasks: tasks
                    .into_iter()
                    .map(|task| TaskPlan {
                        task,
                        episodes,
                        policies: Policies { pickup: pickup.clone(), main: main.clone(), rotations: cfg.rotations },
                    })
                    .collect(),
                master_seed: seed.unwrap_or(cfg.seed),
                chunk: cfg.chunk,
            };
            let summary = collect(&plan, &mut ds)?;
            for (task, (n, done, ok)) in &summary.episodes {
                println!("round {} {task}: {n} episodes, {done} reached the final step, {ok} succeeded", plan.round_id);
            }
        }
        Cmd::Train { store, tasks, steps, lr, batch, seed, out } => {
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.batch = batch.unwrap_or(cfg.batch);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.validate()?;
            let ds = Dataset::open(&store)?;
            let (ckpt, log) = train(&ds, &parse_tasks(&tasks)?, &TrainHyper::from_config(&cfg))?;
            ckpt.save(&out)?;
            write(&with_suffix(&out, ".log.tsv"), &log.to_tsv())?;
            if let Some(last) = log.rows.last() {
                println!("final train loss {:.4}", last.train_loss);
            }
        }
        Cmd::Eval { method, task, episodes, seed, grasp_ckpt, round, out } => {
            let task: Task = task.parse().map_err(|_| HarnessError::Usage(format!("unknown task {task:?}")))?;
            let main = Method::parse(&method)?;
            let pickup = match &grasp_ckpt {
                Some(p) => model(p)?,
                None => main.clone(),
            };
            let spec = EvalSpec {
                task,
                episodes: episodes.unwrap_or(cfg.eval_episodes),
                seed: seed.unwrap_or(cfg.seed),
                attempt_factor: cfg.eval_attempt_factor,
                chunk: cfg.chunk,
                round,
            };
            let policies = Policies { pickup, main: main.clone(), rotations: cfg.rotations };
            let entry = evaluate(&main, &policies, &spec)?;
            println!(
                "{} {}: {:.2}% ({}/{}), 95% interval [{:.2}, {:.2}], {} attempts",
                entry.method,
                entry.task,
                entry.rate * 100.0,
                entry.successes,
                entry.episodes,
                entry.wilson_low * 100.0,
                entry.wilson_high * 100.0,
                entry.attempts
            );
            EvalReport { entries: vec![entry] }.save(&out)?;
        }
        Cmd::Report { inputs, out } => {
            let reports = inputs.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>, _>>()?;
            let b = build_report(&reports)?;
            write(&out, &b.to_text())?;
            write(&with_suffix(&out, ".tsv"), &b.to_tsv())?;
            write(&with_suffix(&out, ".json"), &b.to_json())?;
            print!("{}", b.to_text());
        }
        Cmd::Render { episode, store, out, ckpt } => {
            let ds = Dataset::open(&store)?;
            let m = ckpt.as_deref().map(ModelPolicy::load).transpose()?;
            let files = render_episode(&ds, &episode, &out, m.as_ref())?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Cmd::Pipeline { store, out, seed } => {
            cfg.seed = seed.unwrap_or(cfg.seed);
            let s = run_pipeline(&cfg, &store, &out)?;
            print!("{}", s.benchmark.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
