//! Collection rounds.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{episode_seed, run_episode, HarnessError, Policies};
use crate::data::{Counts, Dataset, Episode};
use crate::policy::Task;

#[derive(Debug, Clone)]
pub struct TaskPlan {
    pub task: Task,
    pub episodes: usize,
    pub policies: Policies,
}

#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub round_id: u32,
    pub tasks: Vec<TaskPlan>,
    pub master_seed: u64,
    /// Episodes simulated in parallel between ordered writes.
    pub chunk: usize,
}

impl RoundPlan {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.tasks.is_empty() {
            return Err(HarnessError::Usage("round plan has no tasks".into()));
        }
        if self.chunk == 0 {
            return Err(HarnessError::Usage("chunk must be positive".into()));
        }
        for (n, t) in self.tasks.iter().enumerate() {
            if t.episodes == 0 {
                return Err(HarnessError::Usage(format!("no episodes planned for {}", t.task)));
            }
            if self.tasks[..n].iter().any(|o| o.task == t.task) {
                return Err(HarnessError::Usage(format!("{} planned twice", t.task)));
            }
            t.policies.check(t.task)?;
        }
        Ok(())
    }
}

pub fn episode_id(round: u32, task: Task, ordinal: usize) -> String {
    format!("r{round}-{task}-{ordinal:05}")
}

/// Per task: episodes run, episodes reaching the end, successes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectSummary {
    pub episodes: BTreeMap<Task, (usize, usize, usize)>,
    /// Cumulative record counts after the round.
    pub counts: BTreeMap<Task, Counts>,
}

/// Run every planned episode and append them as round `plan.round_id`.
/// Nothing becomes visible in the store unless all episodes succeed.
pub fn collect(plan: &RoundPlan, ds: &mut Dataset) -> Result<CollectSummary, HarnessError> {
    plan.validate()?;
    let mut summary = CollectSummary::default();
    let mut writer = ds.begin_round(plan.round_id)?;
    for tp in &plan.tasks {
        let mut start = 0;
        while start < tp.episodes {
            let end = (start + plan.chunk).min(tp.episodes);
            let episodes: Vec<Episode> = (start..end)
                .into_par_iter()
                .map(|n| {
                    let id = episode_id(plan.round_id, tp.task, n);
                    let seed = episode_seed(plan.master_seed, plan.round_id as u64, tp.task.ordinal(), n as u64);
                    run_episode(tp.task, &tp.policies, seed, &id).map_err(|e| HarnessError::Episode {
                        episode: id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_, _>>()?;
            let entry = summary.episodes.entry(tp.task).or_default();
            for ep in &episodes {
                entry.0 += 1;
                entry.1 += ep.completed() as usize;
                entry.2 += ep.success() as usize;
            }
            writer.write(&episodes)?;
            start = end;
        }
        log::info!(
            "round {} {}: {} episodes, {} successes",
            plan.round_id,
            tp.task,
            summary.episodes[&tp.task].0,
            summary.episodes[&tp.task].2
        );
    }
    summary.counts = writer.commit()?;
    Ok(summary)
}
