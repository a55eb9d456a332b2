//! Orchestration: episodes, collection rounds, training, evaluation,
//! reports, rendering and the full round schedule.
//!
//! Everything is a pure function of the master seed, the plan and the
//! checkpoints it reads. Episodes run in parallel but are always collected
//! in order, so artifacts are byte-identical across runs and thread counts.

mod collect;
mod config;
mod episode;
mod eval;
mod pipeline;
mod render;
mod report;
mod seeds;
mod train;

pub use collect::{collect, CollectSummary, RoundPlan, TaskPlan};
pub use config::Config;
pub use episode::{run_episode, Method, ModelPolicy, Policies};
pub use eval::{evaluate, wilson_interval, EvalEntry, EvalReport, EvalSpec, Outcome};
pub use pipeline::{run_pipeline, PipelineSummary};
pub use render::{render_episode, write_pgm};
pub use report::{build_report, Benchmark, Cell, SeriesPoint, METHODS};
pub use seeds::{episode_seed, mix, EVAL_NAMESPACE, TRAIN_NAMESPACE};
pub use train::{train, TrainHyper, TrainLog, TrainRow};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::grid::GridError;
use crate::model::ModelError;
use crate::policy::PolicyError;
use crate::repr::ReprError;
use crate::sim::SimError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("episode {episode}: {source}")]
    Episode { episode: String, source: Box<HarnessError> },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error("inconsistent report: {0}")]
    Report(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl HarnessError {
    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Policy(PolicyError::UnknownTask(_)) => 1,
            HarnessError::Numeric(_) => 3,
            HarnessError::Model(ModelError::Tensor(TensorError::NonFinite(_))) => 3,
            HarnessError::Episode { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(path.to_path_buf(), e)
}
