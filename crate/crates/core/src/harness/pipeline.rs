//! The four-round schedule followed by the benchmark.
//!
//! Rounds 1 and 2 collect grasp episodes only (random, then the first
//! model). Rounds 3 and 4 collect all four tasks. A grasp model is trained
//! after each round and evaluated for the per-round series; after round 4,
//! one separate model per task and the joint model are benchmarked against
//! the random and scripted baselines.
//!
//! Every stage writes its artifact last and is skipped when the artifact
//! already exists, so an interrupted run resumes where it stopped.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::{
    build_report, collect, evaluate, io_err, train, Benchmark, Config, EvalReport, EvalSpec, HarnessError, Method, ModelPolicy,
    Policies, RoundPlan, TaskPlan, TrainHyper,
};
use crate::data::Dataset;
use crate::model::Checkpoint;
use crate::policy::Task;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub gate_rate: f64,
    pub gate_passed: bool,
    pub benchmark: Benchmark,
}

struct Run<'a> {
    cfg: &'a Config,
    out: &'a Path,
    timings: PathBuf,
}

impl Run<'_> {
    fn time<T>(&self, stage: &str, f: impl FnOnce() -> Result<T, HarnessError>) -> Result<T, HarnessError> {
        let t = Instant::now();
        let v = f()?;
        let secs = t.elapsed().as_secs_f64();
        log::info!("{stage}: {secs:.1}s");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.timings)
            .map_err(io_err(&self.timings))?;
        writeln!(file, "{stage}\t{secs:.3}").map_err(io_err(&self.timings))?;
        Ok(v)
    }

    fn collect_round(&self, ds: &mut Dataset, round: u32, tasks: Vec<TaskPlan>) -> Result<(), HarnessError> {
        if ds.last_round() >= round {
            log::info!("round {round} already collected");
            return Ok(());
        }
        let plan = RoundPlan {
            round_id: round,
            tasks,
            master_seed: self.cfg.seed,
            chunk: self.cfg.chunk,
        };
        self.time(&format!("collect_r{round}"), || collect(&plan, ds).map(|_| ()))
    }

    /// Train (or reuse) `name.rtw` on `tasks`. Every stratum gets the update
    /// budget a single-stratum model gets.
    fn model(&self, ds: &Dataset, name: &str, tasks: &[Task]) -> Result<Arc<ModelPolicy>, HarnessError> {
        let path = self.out.join(format!("{name}.rtw"));
        let log_path = self.out.join(format!("{name}.train.tsv"));
        if !log_path.exists() {
            let hyper = TrainHyper {
                per_stratum: true,
                ..TrainHyper::from_config(self.cfg)
            };
            let (ckpt, log) = self.time(&format!("train_{name}"), || train(ds, tasks, &hyper))?;
            ckpt.save(&path)?;
            std::fs::write(&log_path, log.to_tsv()).map_err(io_err(&log_path))?;
        }
        let ckpt = Checkpoint::load(&path)?;
        let label = ckpt.meta.get("mode").cloned().unwrap_or_else(|| "tae".into());
        Ok(Arc::new(ModelPolicy::new(label, ckpt)))
    }

    /// Evaluate (or reload) a report of several cells.
    fn report(&self, name: &str, cells: Vec<(Method, Policies, Task, Option<u32>)>) -> Result<EvalReport, HarnessError> {
        let path = self.out.join(format!("{name}.json"));
        if path.exists() {
            return EvalReport::load(&path);
        }
        let stage = if name.starts_with("eval_") { name.to_string() } else { format!("eval_{name}") };
        let report = self.time(&stage, || {
            let mut r = EvalReport::default();
            for (method, policies, task, round) in &cells {
                let spec = EvalSpec {
                    task: *task,
                    episodes: self.cfg.eval_episodes,
                    seed: self.cfg.seed,
                    attempt_factor: self.cfg.eval_attempt_factor,
                    chunk: self.cfg.chunk,
                    round: *round,
                };
                r.entries.push(evaluate(method, policies, &spec)?);
            }
            Ok(r)
        })?;
        report.save(&path)?;
        Ok(report)
    }
}

/// Run the whole schedule. Artifacts land in `out`; the dataset in `store`.
pub fn run_pipeline(cfg: &Config, store: &Path, out: &Path) -> Result<PipelineSummary, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))?;
    let run = Run {
        cfg,
        out,
        timings: out.join("timings.tsv"),
    };
    let k = cfg.rotations;
    let n = cfg.round_episodes;
    let uniform = |m: &Method| Policies::uniform(m.clone(), k);
    let plan = |task: Task, pickup: &Method, main: &Method| TaskPlan {
        task,
        episodes: n,
        policies: Policies {
            pickup: pickup.clone(),
            main: main.clone(),
            rotations: k,
        },
    };
    let mut ds = Dataset::open(store)?;
    let mut series = Vec::new();

    // round 1: random grasps
    run.collect_round(&mut ds, 1, vec![plan(Task::Grasp, &Method::Random, &Method::Random)])?;
    let m1 = Method::Model(run.model(&ds, "m1", &[Task::Grasp])?);
    series.push(run.report("round1", vec![(m1.clone(), uniform(&m1), Task::Grasp, Some(1))])?);

    // round 2: grasps with the first model
    run.collect_round(&mut ds, 2, vec![plan(Task::Grasp, &m1, &m1)])?;
    let m2 = Method::Model(run.model(&ds, "m2", &[Task::Grasp])?);
    let r2 = run.report("round2", vec![(m2.clone(), uniform(&m2), Task::Grasp, Some(2))])?;
    let gate_rate = r2.entries[0].rate;
    let gate_passed = gate_rate >= cfg.gate;
    if gate_passed {
        log::info!("grasp success {:.1}% clears the {:.0}% gate", gate_rate * 100.0, cfg.gate * 100.0);
    } else {
        log::warn!("grasp success {:.1}% is below the {:.0}% gate; continuing", gate_rate * 100.0, cfg.gate * 100.0);
    }
    let gate_path = out.join("gate.txt");
    let gate_text = format!("grasp_rate={gate_rate}\ngate={}\npassed={gate_passed}\n", cfg.gate);
    std::fs::write(&gate_path, gate_text).map_err(io_err(&gate_path))?;
    series.push(r2);

    // round 3: all tasks; the grasp-only model handles every grasp-type step
    // (zero-shot for the bi-manual pincer) and pushes start random
    run.collect_round(
        &mut ds,
        3,
        vec![
            plan(Task::Grasp, &m2, &m2),
            plan(Task::Push, &m2, &Method::Random),
            plan(Task::GraspGrasp, &m2, &m2),
            plan(Task::GraspPush, &m2, &Method::Random),
        ],
    )?;
    let m3 = Method::Model(run.model(&ds, "m3", &Task::ALL)?);
    series.push(run.report("round3", vec![(m3.clone(), uniform(&m3), Task::Grasp, Some(3))])?);

    // round 4: all tasks with the joint model
    run.collect_round(&mut ds, 4, Task::ALL.iter().map(|&t| plan(t, &m3, &m3)).collect())?;
    let joint = Method::Model(run.model(&ds, "joint", &Task::ALL)?);
    series.push(run.report("round4", vec![(joint.clone(), uniform(&joint), Task::Grasp, Some(4))])?);

    // benchmark: tool pickups always use the joint model's grasp network
    let with_pickup = |m: &Method| Policies {
        pickup: joint.clone(),
        main: m.clone(),
        rotations: k,
    };
    let cells = |m: &Method| Task::ALL.iter().map(|&t| (m.clone(), with_pickup(m), t, None)).collect::<Vec<_>>();
    let mut reports = vec![
        run.report("eval_random", cells(&Method::Random))?,
        run.report("eval_scripted", cells(&Method::Scripted))?,
    ];
    let mut separate = Vec::new();
    for t in Task::ALL {
        let m = Method::Model(run.model(&ds, &format!("separate_{}", t.name()), &[t])?);
        separate.push((m.clone(), with_pickup(&m), t, None));
    }
    reports.push(run.report("eval_separate", separate)?);
    reports.push(run.report("eval_joint", cells(&joint))?);
    reports.extend(series);

    let benchmark = build_report(&reports)?;
    for (ext, text) in [("txt", benchmark.to_text()), ("tsv", benchmark.to_tsv()), ("json", benchmark.to_json())] {
        let p = out.join(format!("benchmark.{ext}"));
        std::fs::write(&p, text).map_err(io_err(&p))?;
    }
    Ok(PipelineSummary {
        gate_rate,
        gate_passed,
        benchmark,
    })
}
