//! Supervised training of one network per primitive.
//!
//! Grasp-type steps (grasps, tool pickups, the pincer) train the grasp
//! network and pushes train the push network. Records are stratified by task
//! and step kind, and minibatches are balanced over strata and labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix, Config, HarnessError, TRAIN_NAMESPACE};
use crate::data::{augment_translate, is_validation, Augmentable, Dataset, StepRecord, Strata, Stratum};
use crate::model::{batch_loss, loss_and_grads, scene_tensor, Architecture, Checkpoint, ModelError, NetKind, Sample, TaeParams};
use crate::policy::Task;
use crate::tensor::{Adam, AdamConfig, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_shift: i64,
    pub seed: u64,
    pub rotations: usize,
    pub log_every: usize,
    pub val_records: usize,
    /// Run `steps` updates per stratum a network trains on, instead of in total.
    pub per_stratum: bool,
}

impl TrainHyper {
    pub fn from_config(c: &Config) -> Self {
        Self {
            steps: c.steps,
            lr: c.lr,
            batch: c.batch,
            max_shift: c.max_shift,
            seed: c.seed,
            rotations: c.rotations,
            log_every: c.log_every,
            val_records: c.val_records,
            per_stratum: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub net: NetKind,
    pub step: usize,
    /// Mean minibatch loss since the previous row.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("net\tstep\ttrain_loss\tval_loss\n");
        for r in &self.rows {
            let val = r.val_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(s, "{}\t{}\t{:.6}\t{val}", r.net.name(), r.step, r.train_loss);
        }
        s
    }
}

/// The (task, step kind) strata each network trains on.
pub fn net_strata(tasks: &[Task]) -> BTreeMap<NetKind, Vec<Stratum>> {
    let mut out: BTreeMap<NetKind, Vec<Stratum>> = BTreeMap::new();
    for &task in tasks {
        for step in 0..task.step_budget() {
            let kind = task.step_kind(step);
            let keys = out.entry(kind.net()).or_default();
            if !keys.contains(&Stratum { task, kind }) {
                keys.push(Stratum { task, kind });
            }
        }
    }
    out
}

fn mode_label(tasks: &[Task]) -> &'static str {
    if Task::ALL.iter().all(|t| tasks.contains(t)) {
        "joint"
    } else if tasks.len() == 1 {
        "separate"
    } else {
        "multi"
    }
}

fn load_sample(ds: &Dataset, r: &StepRecord, max_shift: i64, rng: &mut ChaCha8Rng) -> Result<Sample, HarnessError> {
    let a = Augmentable {
        scene: ds.load_scene(r)?,
        action: r.action,
        success: r.success,
    };
    let a = if max_shift > 0 { augment_translate(&a, max_shift, rng) } else { a };
    Ok(Sample {
        scene: scene_tensor(&a.scene)?,
        ee: (*ds.load_ee(r)?).clone(),
        i: a.action.i,
        j: a.action.j,
        k: a.action.k,
        range: r.kind().angle_range(),
        label: a.success,
    })
}

/// Up to `n` held-out records, split evenly over (stratum, label) and taken
/// in manifest order.
fn validation_set(ds: &Dataset, keys: &[Stratum], n: usize) -> Vec<usize> {
    let per = (n / (2 * keys.len().max(1))).max(1);
    let mut out = Vec::new();
    for &key in keys {
        for label in [true, false] {
            out.extend(
                ds.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.stratum() == key && r.success == label && is_validation(&r.episode_id))
                    .map(|(i, _)| i)
                    .take(per),
            );
        }
    }
    out
}

fn numeric(net: NetKind, step: usize, e: ModelError) -> HarnessError {
    match e {
        ModelError::Tensor(TensorError::NonFinite(m)) => HarnessError::Numeric(format!("{} net, step {step}: {m}", net.name())),
        other => other.into(),
    }
}

fn validation_loss(ds: &Dataset, p: &TaeParams, val: &[usize], batch: usize) -> Result<Option<f64>, HarnessError> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for chunk in val.chunks(batch.max(1)) {
        let samples = chunk
            .iter()
            .map(|&i| load_sample(ds, &ds.records[i], 0, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        total += batch_loss(p, &samples)? * samples.len() as f64;
    }
    Ok(Some(total / val.len() as f64))
}

/// Train one network per primitive needed by `tasks`. With zero steps the
/// result is the seeded initialization.
pub fn train(ds: &Dataset, tasks: &[Task], hyper: &TrainHyper) -> Result<(Checkpoint, TrainLog), HarnessError> {
    if tasks.is_empty() {
        return Err(HarnessError::Usage("no tasks to train".into()));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) {
        return Err(HarnessError::Usage("batch and lr must be positive".into()));
    }
    let mut ckpt = Checkpoint::default();
    let mut log = TrainLog::default();
    for (net, keys) in net_strata(tasks) {
        let steps = if hyper.per_stratum { hyper.steps * keys.len() } else { hyper.steps };
        let ordinal = NetKind::ALL.iter().position(|&n| n == net).expect("known net") as u64;
        let arch = Architecture {
            rotations: hyper.rotations,
            init_seed: mix(&[hyper.seed, TRAIN_NAMESPACE, ordinal, 0]),
            ..Default::default()
        };
        let mut params = TaeParams::init(arch)?;
        if steps > 0 {
            let strata = Strata::from_keys(
                ds.records
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| keys.contains(&r.stratum()) && !is_validation(&r.episode_id))
                    .map(|(i, r)| (i, r.stratum(), r.success)),
            );
            strata.check(&keys)?;
            let val = validation_set(ds, &keys, hyper.val_records);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[hyper.seed, TRAIN_NAMESPACE, ordinal, 1]));
            let mut opt = Adam::new(AdamConfig {
                lr: hyper.lr,
                ..Default::default()
            });
            let (mut window_sum, mut window_n) = (0.0, 0usize);
            for step in 1..=steps {
                let picks = strata.sample_minibatch(hyper.batch, &keys, &mut rng)?;
                let samples = picks
                    .iter()
                    .map(|&i| load_sample(ds, &ds.records[i], hyper.max_shift, &mut rng))
                    .collect::<Result<Vec<_>, _>>()?;
                let (loss, grads) = loss_and_grads(&params, &samples).map_err(|e| numeric(net, step, e))?;
                if !loss.is_finite() {
                    return Err(HarnessError::Numeric(format!("{} net, step {step}: loss is {loss}", net.name())));
                }
                opt.step(&mut params.tensors, &grads).map_err(|e| numeric(net, step, e.into()))?;
                window_sum += loss;
                window_n += 1;
                if step == steps || (hyper.log_every > 0 && step % hyper.log_every == 0) {
                    let val_loss = validation_loss(ds, &params, &val, hyper.batch)?;
                    let train_loss = window_sum / window_n as f64;
                    log::info!(
                        "{} net step {step}: train {train_loss:.4} val {}",
                        net.name(),
                        val_loss.map_or("-".into(), |v| format!("{v:.4}"))
                    );
                    log.rows.push(TrainRow { net, step, train_loss, val_loss });
                    (window_sum, window_n) = (0.0, 0);
                }
            }
            if !params.tensors.iter().all(|t| t.all_finite()) {
                return Err(HarnessError::Numeric(format!("{} net parameters became non-finite", net.name())));
            }
        }
        ckpt.meta.insert(format!("steps_{}", net.name()), steps.to_string());
        ckpt.nets.insert(net, params);
    }
    let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
    ckpt.meta.insert("tasks".into(), names.join(","));
    ckpt.meta.insert("mode".into(), mode_label(tasks).into());
    ckpt.meta.insert("steps".into(), hyper.steps.to_string());
    ckpt.meta.insert("lr".into(), hyper.lr.to_string());
    ckpt.meta.insert("batch".into(), hyper.batch.to_string());
    ckpt.meta.insert("seed".into(), hyper.seed.to_string());
    Ok((ckpt, log))
}
