//! Success-rate evaluation on fresh episodes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{episode_seed, io_err, run_episode, HarnessError, Method, Policies, EVAL_NAMESPACE};
use crate::policy::Task;

/// Stored result of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub seed: u64,
    pub steps: usize,
    /// Reached and executed the final step.
    pub completed: bool,
    pub success: bool,
    pub illegal: bool,
}

/// One (method, task) cell. Multi-step rates are conditional on reaching the
/// final step: `episodes` counts completed episodes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub method: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub seed: u64,
    pub requested: usize,
    pub attempts: usize,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub illegal: usize,
    pub outcomes: Vec<Outcome>,
}

impl EvalEntry {
    /// Recompute every summary field from the stored outcomes.
    pub fn check(&self) -> Result<(), HarnessError> {
        let episodes = self.outcomes.iter().filter(|o| o.completed).count();
        let successes = self.outcomes.iter().filter(|o| o.completed && o.success).count();
        let illegal = self.outcomes.iter().filter(|o| o.illegal).count();
        let (lo, hi) = wilson_interval(successes, episodes);
        let ok = episodes == self.episodes
            && successes == self.successes
            && illegal == self.illegal
            && self.attempts == self.outcomes.len()
            && successes <= episodes
            && rate(successes, episodes) == self.rate
            && lo == self.wilson_low
            && hi == self.wilson_high
            && self.outcomes.iter().all(|o| !o.success || o.completed)
            && self.outcomes.iter().all(|o| !(o.illegal && o.success));
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Report(format!("{} / {}: summary does not match outcomes", self.method, self.task)))
        }
    }

    pub fn task(&self) -> Result<Task, HarnessError> {
        Ok(self.task.parse()?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let r: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Json(path.to_path_buf(), e))?;
        for e in &r.entries {
            e.check()?;
        }
        Ok(r)
    }
}

fn rate(successes: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        successes as f64 / n as f64
    }
}

/// 95% Wilson score interval; `(0, 1)` when `n == 0`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let (s, n) = (successes as f64, n as f64);
    let p = s / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub task: Task,
    /// Episodes that must reach the final step.
    pub episodes: usize,
    pub seed: u64,
    /// Give up after `episodes * attempt_factor` attempts.
    pub attempt_factor: usize,
    pub chunk: usize,
    pub round: Option<u32>,
}

/// Run fresh evaluation episodes until `spec.episodes` reach the final step
/// or the attempt cap is hit. Seeds come from the evaluation namespace and
/// never coincide with collection seeds.
pub fn evaluate(method: &Method, policies: &Policies, spec: &EvalSpec) -> Result<EvalEntry, HarnessError> {
    policies.check(spec.task)?;
    if spec.episodes == 0 || spec.chunk == 0 || spec.attempt_factor == 0 {
        return Err(HarnessError::Usage("episodes, chunk and attempt factor must be positive".into()));
    }
    let cap = spec.episodes * spec.attempt_factor;
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut completed = 0;
    while completed < spec.episodes && outcomes.len() < cap {
        let start = outcomes.len();
        let end = (start + spec.chunk).min(cap);
        let batch: Vec<Outcome> = (start..end)
            .into_par_iter()
            .map(|n| {
                let id = format!("eval-{}-{n:05}", spec.task);
                let seed = episode_seed(spec.seed, EVAL_NAMESPACE, spec.task.ordinal(), n as u64);
                let ep = run_episode(spec.task, policies, seed, &id).map_err(|e| HarnessError::Episode {
                    episode: id.clone(),
                    source: Box::new(e),
                })?;
                Ok(Outcome {
                    id,
                    seed,
                    steps: ep.steps.len(),
                    completed: ep.completed(),
                    success: ep.success(),
                    illegal: ep.illegal(),
                })
            })
            .collect::<Result<_, HarnessError>>()?;
        // keep the prefix that reaches exactly the requested count
        for o in batch {
            if completed == spec.episodes {
                break;
            }
            completed += o.completed as usize;
            outcomes.push(o);
        }
    }
    let successes = outcomes.iter().filter(|o| o.completed && o.success).count();
    let (wilson_low, wilson_high) = wilson_interval(successes, completed);
    log::info!("eval {} {}: {successes}/{completed} over {} attempts", method.label(), spec.task, outcomes.len());
    Ok(EvalEntry {
        method: method.label().to_string(),
        task: spec.task.name().to_string(),
        round: spec.round,
        seed: spec.seed,
        requested: spec.episodes,
        attempts: outcomes.len(),
        episodes: completed,
        successes,
        rate: rate(successes, completed),
        wilson_low,
        wilson_high,
        illegal: outcomes.iter().filter(|o| o.illegal).count(),
        outcomes,
    })
}
