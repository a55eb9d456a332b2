//! One episode: spawn, observe, act, execute, stop at the first failure.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{mix, HarnessError};
use crate::data::{Episode, EpisodeStep};
use crate::grid::MapGeometry;
use crate::model::{ee_kernels, forward_q_with, AngleRange, Checkpoint, EeKernels};
use crate::policy::{
    index_to_pose, pose_to_index, random_policy, scripted_policy, select_action, ActionIndex, StepKind, Task,
};
use crate::repr::{render_end_effector, render_scene, EeSource, EndEffectorRepr, SceneObs};
use crate::sim::{ArmId, ContactRules, Role, WorldState};

const KERNEL_CACHE: usize = 16;

type KernelKey = (&'static str, AngleRange, [u8; 32]);

/// A trained checkpoint used as a policy. Rotated end-effector kernels of
/// the bare gripper are cached, since every grasp step sees the same map.
#[derive(Debug)]
pub struct ModelPolicy {
    pub label: String,
    pub ckpt: Checkpoint,
    cache: Mutex<HashMap<KernelKey, Arc<EeKernels>>>,
}

impl ModelPolicy {
    pub fn new(label: impl Into<String>, ckpt: Checkpoint) -> Self {
        Self {
            label: label.into(),
            ckpt,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Load a checkpoint; the label is its `mode` metadata when present.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let ckpt = Checkpoint::load(path)?;
        let label = ckpt.meta.get("mode").cloned().unwrap_or_else(|| "tae".into());
        Ok(Self::new(label, ckpt))
    }

    /// Greedy action from the Q map of `kind`'s network.
    pub fn select(&self, kind: StepKind, ee: &EndEffectorRepr, scene: &SceneObs, reusable: bool) -> Result<ActionIndex, HarnessError> {
        let net = self.ckpt.net(kind.net())?;
        let range = kind.angle_range();
        let kernels = if reusable {
            let digest: [u8; 32] = Sha256::digest(ee.to_tensor().to_bytes()).into();
            let key = (kind.net().name(), range, digest);
            let hit = self.cache.lock().expect("kernel cache").get(&key).cloned();
            match hit {
                Some(k) => k,
                None => {
                    let k = Arc::new(ee_kernels(ee, net, range)?);
                    let mut cache = self.cache.lock().expect("kernel cache");
                    if cache.len() < KERNEL_CACHE {
                        cache.insert(key, k.clone());
                    }
                    k
                }
            }
        } else {
            Arc::new(ee_kernels(ee, net, range)?)
        };
        Ok(select_action(&forward_q_with(&kernels, scene, net)?))
    }
}

#[derive(Debug, Clone)]
pub enum Method {
    Random,
    Scripted,
    Model(Arc<ModelPolicy>),
}

impl Method {
    pub fn label(&self) -> &str {
        match self {
            Method::Random => "random",
            Method::Scripted => "scripted",
            Method::Model(m) => &m.label,
        }
    }

    /// `random`, `scripted` or `ckpt:PATH`.
    pub fn parse(spec: &str) -> Result<Self, HarnessError> {
        match spec {
            "random" => Ok(Method::Random),
            "scripted" => Ok(Method::Scripted),
            s => match s.strip_prefix("ckpt:") {
                Some(p) if !p.is_empty() => Ok(Method::Model(Arc::new(ModelPolicy::load(Path::new(p))?))),
                _ => Err(HarnessError::Usage(format!("unknown method {s:?}: expected random, scripted or ckpt:PATH"))),
            },
        }
    }
}

/// Policy per step: tool pickups may use a different method from the
/// task's own steps.
#[derive(Debug, Clone)]
pub struct Policies {
    pub pickup: Method,
    pub main: Method,
    pub rotations: usize,
}

impl Policies {
    pub fn uniform(method: Method, rotations: usize) -> Self {
        Self {
            pickup: method.clone(),
            main: method,
            rotations,
        }
    }

    pub fn for_kind(&self, kind: StepKind) -> &Method {
        if kind == StepKind::ToolPickup {
            &self.pickup
        } else {
            &self.main
        }
    }

    /// Every step of `task` must have a usable policy.
    pub fn check(&self, task: Task) -> Result<(), HarnessError> {
        if self.rotations == 0 {
            return Err(HarnessError::Usage("rotations must be positive".into()));
        }
        for step in 0..task.step_budget() {
            let kind = task.step_kind(step);
            if let Method::Model(m) = self.for_kind(kind) {
                let net = m.ckpt.net(kind.net())?;
                if net.arch.rotations != self.rotations {
                    return Err(HarnessError::Usage(format!(
                        "{} uses {} rotations, the plan codes actions with {}",
                        m.label, net.arch.rotations, self.rotations
                    )));
                }
            }
        }
        Ok(())
    }
}

fn step_arm(kind: StepKind, step: usize) -> ArmId {
    // grasp->grasp picks the second tool with the right arm
    if kind == StepKind::ToolPickup && step == 1 {
        ArmId::Right
    } else {
        ArmId::Left
    }
}

/// Run one episode of `task` from `seed`. The world and the policies draw
/// from separate streams, so a policy change never alters spawned objects.
pub fn run_episode(task: Task, policies: &Policies, seed: u64, episode_id: &str) -> Result<Episode, HarnessError> {
    policies.check(task)?;
    let geom = MapGeometry::scene();
    let k = policies.rotations;
    let rules = ContactRules::default();
    let mut world = WorldState::new(seed);
    let mut world_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 1]));
    let mut policy_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, 2]));
    let mut steps = Vec::with_capacity(task.step_budget());
    for step in 0..task.step_budget() {
        let kind = task.step_kind(step);
        let role = if kind == StepKind::ToolPickup { Role::Tool } else { Role::Target };
        world.spawn_object(role, &mut world_rng)?;
        let arm = step_arm(kind, step);
        let source = if kind == StepKind::BimanualGrasp { EeSource::Pincer } else { EeSource::Arm(arm) };
        let ee = render_end_effector(&world, source)?;
        let scene = render_scene(&world);
        let range = kind.angle_range();
        let action = match policies.for_kind(kind) {
            // baseline poses are snapped to the action grid so the stored
            // index is exactly the executed action
            Method::Random => pose_to_index(random_policy(&geom, range, &mut policy_rng), &geom, k, range)?,
            Method::Scripted => pose_to_index(scripted_policy(&world, kind, &mut policy_rng)?, &geom, k, range)?,
            Method::Model(m) => {
                let bare = source != EeSource::Pincer && world.arm(arm).held_tool.is_none();
                m.select(kind, &ee, &scene, bare)?
            }
        };
        let pose = index_to_pose(action, &geom, k, range)?;
        let outcome = match kind {
            StepKind::Grasp | StepKind::ToolPickup => world.grasp_primitive(arm, pose.to_pose(), rules),
            StepKind::Push => world.push_primitive(arm, pose.to_pose(), rules),
            StepKind::BimanualGrasp => world.bimanual_grasp_primitive(pose.to_pose(), rules)?,
        };
        steps.push(EpisodeStep {
            kind,
            action,
            pose,
            success: outcome.success,
            illegal: outcome.illegal_contact,
            ee,
            scene,
        });
        if !outcome.success {
            break;
        }
    }
    Ok(Episode {
        episode_id: episode_id.to_string(),
        task,
        seed,
        steps,
    })
}
