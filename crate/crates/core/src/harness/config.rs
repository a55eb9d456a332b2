//! Plain-text `key=value` configuration. Blank lines and `#` comments are
//! skipped; unknown keys are an error so typos do not pass silently.

use std::fmt::Write as _;
use std::path::Path;

use super::{io_err, HarnessError};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub rotations: usize,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub max_shift: i64,
    /// Episodes per task per collection round.
    pub round_episodes: usize,
    /// Final-step episodes per evaluation cell.
    pub eval_episodes: usize,
    /// Attempt cap per cell, as a multiple of `eval_episodes`.
    pub eval_attempt_factor: usize,
    /// Grasp success needed before multi-task rounds.
    pub gate: f64,
    pub log_every: usize,
    pub val_records: usize,
    /// Episodes run in parallel between ordered writes.
    pub chunk: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            rotations: 16,
            lr: 1e-4,
            batch: 8,
            steps: 20_000,
            max_shift: crate::data::MAX_SHIFT,
            round_episodes: 2_000,
            eval_episodes: 500,
            eval_attempt_factor: 20,
            gate: 0.60,
            log_every: 500,
            val_records: 256,
            chunk: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Usage(format!("config: bad value {v:?} for {key}")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "rotations" => self.rotations = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "max_shift" => self.max_shift = parse(key, v)?,
            "round_episodes" => self.round_episodes = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "eval_attempt_factor" => self.eval_attempt_factor = parse(key, v)?,
            "gate" => self.gate = parse(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "val_records" => self.val_records = parse(key, v)?,
            "chunk" => self.chunk = parse(key, v)?,
            other => return Err(HarnessError::Usage(format!("config: unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("config line {}: expected key=value", n + 1)))?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Usage(format!("config: {m}")));
        if self.rotations == 0 {
            return bad("rotations must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.chunk == 0 || self.eval_attempt_factor == 0 {
            return bad("batch, chunk and eval_attempt_factor must be positive");
        }
        if self.max_shift < 0 {
            return bad("max_shift must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gate) {
            return bad("gate must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "rotations={}", self.rotations);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "max_shift={}", self.max_shift);
        let _ = writeln!(s, "round_episodes={}", self.round_episodes);
        let _ = writeln!(s, "eval_episodes={}", self.eval_episodes);
        let _ = writeln!(s, "eval_attempt_factor={}", self.eval_attempt_factor);
        let _ = writeln!(s, "gate={}", self.gate);
        let _ = writeln!(s, "log_every={}", self.log_every);
        let _ = writeln!(s, "val_records={}", self.val_records);
        let _ = writeln!(s, "chunk={}", self.chunk);
        s
    }
}
