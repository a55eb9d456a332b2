//! Benchmark table and per-round series, rebuilt from stored outcomes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalReport, HarnessError};
use crate::policy::Task;

/// Table rows, in order.
pub const METHODS: [&str; 4] = ["random", "scripted", "separate", "joint"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    /// `None` when no report covered the cell.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub round: u32,
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub cells: Vec<Cell>,
    pub series: Vec<SeriesPoint>,
}

fn tally(outcomes: &[super::Outcome]) -> (usize, usize) {
    let n = outcomes.iter().filter(|o| o.completed).count();
    let s = outcomes.iter().filter(|o| o.completed && o.success).count();
    (n, s)
}

fn pct(successes: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        successes as f64 / n as f64
    }
}

/// Entries without a round fill the 4 x 4 table; entries with a round form
/// the series. Round 0 is the random policy unless given explicitly.
pub fn build_report(reports: &[EvalReport]) -> Result<Benchmark, HarnessError> {
    let mut cells: BTreeMap<(usize, Task), (usize, usize)> = BTreeMap::new();
    let mut series: BTreeMap<(u32, Task), (usize, usize)> = BTreeMap::new();
    for entry in reports.iter().flat_map(|r| &r.entries) {
        entry.check()?;
        let task = entry.task()?;
        let counts = tally(&entry.outcomes);
        match entry.round {
            Some(round) => {
                if series.insert((round, task), counts).is_some() {
                    return Err(HarnessError::Report(format!("round {round} {task} reported twice")));
                }
            }
            None => {
                let Some(m) = METHODS.iter().position(|&m| m == entry.method) else {
                    log::warn!("method {} is not a table row; skipped", entry.method);
                    continue;
                };
                if cells.insert((m, task), counts).is_some() {
                    return Err(HarnessError::Report(format!("{} / {task} reported twice", entry.method)));
                }
            }
        }
    }
    for task in Task::ALL {
        if let Some(&c) = cells.get(&(0, task)) {
            series.entry((0, task)).or_insert(c);
        }
    }
    let mut out = Benchmark::default();
    for (m, method) in METHODS.iter().enumerate() {
        for task in Task::ALL {
            let c = cells.get(&(m, task));
            out.cells.push(Cell {
                method: method.to_string(),
                task: task.name().into(),
                episodes: c.map_or(0, |c| c.0),
                successes: c.map_or(0, |c| c.1),
                rate: c.map(|&(n, s)| pct(s, n)),
            });
        }
    }
    for ((round, task), (n, s)) in series {
        out.series.push(SeriesPoint {
            round,
            task: task.name().into(),
            episodes: n,
            successes: s,
            rate: pct(s, n),
        });
    }
    Ok(out)
}

impl Benchmark {
    pub fn cell(&self, method: &str, task: Task) -> Option<&Cell> {
        self.cells.iter().find(|c| c.method == method && c.task == task.name())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("success rate % (successes/episodes)\n\n");
        let _ = write!(s, "{:<10}", "method");
        for t in Task::ALL {
            let _ = write!(s, "  {:>20}", t.name());
        }
        s.push('\n');
        for method in METHODS {
            let _ = write!(s, "{method:<10}");
            for t in Task::ALL {
                let text = match self.cell(method, t) {
                    Some(Cell { rate: Some(r), successes, episodes, .. }) => format!("{:.2} ({successes}/{episodes})", r * 100.0),
                    _ => "n/a".into(),
                };
                let _ = write!(s, "  {text:>20}");
            }
            s.push('\n');
        }
        if !self.series.is_empty() {
            s.push_str("\nsuccess rate % by round\n\n");
            let _ = writeln!(s, "{:<6}  {:<12}  {:>8}  {:>12}", "round", "task", "rate", "succ/eps");
            for p in &self.series {
                let _ = writeln!(
                    s,
                    "{:<6}  {:<12}  {:>8.2}  {:>12}",
                    p.round,
                    p.task,
                    p.rate * 100.0,
                    format!("{}/{}", p.successes, p.episodes)
                );
            }
        }
        s
    }

    /// One row per cell and per series point.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("kind\tmethod\tround\ttask\tepisodes\tsuccesses\trate\n");
        for c in &self.cells {
            let rate = c.rate.map_or("-".into(), |r| format!("{r:.6}"));
            let _ = writeln!(s, "cell\t{}\t-\t{}\t{}\t{}\t{rate}", c.method, c.task, c.episodes, c.successes);
        }
        for p in &self.series {
            let _ = writeln!(s, "round\t-\t{}\t{}\t{}\t{}\t{:.6}", p.round, p.task, p.episodes, p.successes, p.rate);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("benchmark serializes") + "\n"
    }
}
