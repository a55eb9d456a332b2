//! Action selection, pose coding and the two baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::grid::{MapGeometry, Pixel, Pose2, Vec2};
use crate::model::{AngleRange, NetKind, QMap};
use crate::sim::WorldState;

/// Scripted pushes start this far behind (−x of) the object centroid.
pub const PUSH_OFFSET_X: f64 = 0.12;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("action index ({i}, {j}, {k}) out of range for {res}x{res}x{rotations}")]
    IndexOutOfRange { i: usize, j: usize, k: usize, res: usize, rotations: usize },
    #[error("pose ({x:.4}, {y:.4}) lies outside the workspace")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("no target object in the scene")]
    NoTarget,
    #[error("unknown task '{0}'")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Grasp,
    Push,
    GraspGrasp,
    GraspPush,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Grasp, Task::Push, Task::GraspGrasp, Task::GraspPush];

    pub fn name(self) -> &'static str {
        match self {
            Task::Grasp => "grasp",
            Task::Push => "push",
            Task::GraspGrasp => "grasp_grasp",
            Task::GraspPush => "grasp_push",
        }
    }

    pub fn ordinal(self) -> u64 {
        self as u64
    }

    /// Number of steps in a complete episode.
    pub fn step_budget(self) -> usize {
        match self {
            Task::Grasp | Task::Push => 1,
            Task::GraspPush => 2,
            Task::GraspGrasp => 3,
        }
    }

    /// The primitive and angle coding of step `step`.
    pub fn step_kind(self, step: usize) -> StepKind {
        match (self, step) {
            (Task::Push, _) | (Task::GraspPush, 1) => StepKind::Push,
            (Task::GraspGrasp, 2) => StepKind::BimanualGrasp,
            (Task::GraspGrasp, 0) | (Task::GraspPush, 0) => StepKind::ToolPickup,
            (Task::GraspGrasp, 1) => StepKind::ToolPickup,
            _ => StepKind::Grasp,
        }
    }

    pub fn final_kind(self) -> StepKind {
        self.step_kind(self.step_budget() - 1)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().replace(['-', '>'], "_").replace("__", "_");
        Task::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| PolicyError::UnknownTask(s.to_string()))
    }
}

/// What a single step does, which decides the network and the angle coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepKind {
    /// Bare-gripper grasp of the task's target.
    Grasp,
    /// Bare-gripper grasp of a tool.
    ToolPickup,
    /// Push with whatever the arm holds.
    Push,
    /// Two held tools closing as one pincer.
    BimanualGrasp,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Grasp => "grasp",
            StepKind::ToolPickup => "tool_pickup",
            StepKind::Push => "push",
            StepKind::BimanualGrasp => "bimanual_grasp",
        }
    }

    pub fn net(self) -> NetKind {
        match self {
            StepKind::Push => NetKind::Push,
            _ => NetKind::Grasp,
        }
    }

    pub fn angle_range(self) -> AngleRange {
        match self {
            StepKind::BimanualGrasp => AngleRange::Half,
            _ => AngleRange::Full,
        }
    }

    pub fn is_grasp(self) -> bool {
        self.net() == NetKind::Grasp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl ActionIndex {
    pub fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    /// Row-major position, then rotation slot.
    pub fn flat(&self, width: usize, rotations: usize) -> usize {
        (self.i * width + self.j) * rotations + self.k
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.i, self.j, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl ActionPose {
    pub fn to_pose(self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

/// Greedy argmax; ties go to the smallest flat index.
pub fn select_action(q: &QMap) -> ActionIndex {
    let s = q.probs.shape();
    let (w, k) = (s[1], s[2]);
    let mut best = 0;
    let data = q.probs.data();
    for (idx, &v) in data.iter().enumerate() {
        // strict comparison keeps the earliest maximum; NaN never wins
        if v > data[best] || (data[best].is_nan() && !v.is_nan()) {
            best = idx;
        }
    }
    ActionIndex::new(best / (w * k), (best / k) % w, best % k)
}

pub fn index_to_pose(idx: ActionIndex, geom: &MapGeometry, rotations: usize, range: AngleRange) -> Result<ActionPose, PolicyError> {
    let res = geom.resolution;
    if idx.i >= res || idx.j >= res || idx.k >= rotations {
        return Err(PolicyError::IndexOutOfRange { i: idx.i, j: idx.j, k: idx.k, res, rotations });
    }
    let p = geom.pixel_to_world(Pixel { row: idx.i, col: idx.j });
    Ok(ActionPose {
        x: p.x,
        y: p.y,
        theta: range.slot_angle(idx.k, rotations),
    })
}

/// Nearest cell and nearest rotation slot (wrapping at the end of the range).
pub fn pose_to_index(pose: ActionPose, geom: &MapGeometry, rotations: usize, range: AngleRange) -> Result<ActionIndex, PolicyError> {
    let px = geom
        .world_to_pixel(Vec2::new(pose.x, pose.y))
        .map_err(|_| PolicyError::PoseOutOfBounds { x: pose.x, y: pose.y })?;
    let step = range.span() / rotations as f64;
    let k = (pose.theta.rem_euclid(range.span()) / step).round() as usize % rotations;
    Ok(ActionIndex::new(px.row, px.col, k))
}

/// Uniform position over the workspace and uniform angle over `range`.
pub fn random_policy<R: Rng + ?Sized>(geom: &MapGeometry, range: AngleRange, rng: &mut R) -> ActionPose {
    ActionPose {
        x: rng.gen_range(geom.bounds_min.x..geom.bounds_max.x),
        y: rng.gen_range(geom.bounds_min.y..geom.bounds_max.y),
        theta: rng.gen_range(0.0..range.span()),
    }
}

/// Object-centroid oracle: the centroid for grasps, `PUSH_OFFSET_X` behind it
/// for pushes, with a uniform angle either way.
pub fn scripted_target(world: &WorldState, kind: StepKind) -> Result<Vec2, PolicyError> {
    let obj = world.scene_object().ok_or(PolicyError::NoTarget)?;
    let c = obj.world_outline().centroid();
    Ok(match kind {
        StepKind::Push => Vec2::new(c.x - PUSH_OFFSET_X, c.y),
        _ => c,
    })
}

/// `scripted_target` clamped into the workspace, plus a uniform angle.
pub fn scripted_policy<R: Rng + ?Sized>(world: &WorldState, kind: StepKind, rng: &mut R) -> Result<ActionPose, PolicyError> {
    let t = scripted_target(world, kind)?;
    let g = &world.scene_geom;
    // keep the pose strictly inside the half-open bounds
    let eps = g.pixel_size() * 1e-3;
    Ok(ActionPose {
        x: t.x.clamp(g.bounds_min.x, g.bounds_max.x - eps),
        y: t.y.clamp(g.bounds_min.y, g.bounds_max.y - eps),
        theta: rng.gen_range(0.0..kind.angle_range().span()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{place_object, Role, SeedShape, ShapeSpec};
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn qmap(values: Vec<f32>, res: usize, k: usize) -> QMap {
        let t = Tensor::new(vec![res, res, k], values).unwrap();
        QMap { logits: t.clone(), probs: t }
    }

    #[test]
    fn single_peak_is_selected() {
        let mut v = vec![0.1; 64 * 64 * 16];
        let at = ActionIndex::new(17, 40, 9);
        v[at.flat(64, 16)] = 0.9;
        assert_eq!(select_action(&qmap(v, 64, 16)), at);
    }

    #[test]
    fn ties_go_to_first_index() {
        assert_eq!(select_action(&qmap(vec![0.5; 64 * 64 * 16], 64, 16)), ActionIndex::new(0, 0, 0));
        let mut v = vec![0.0; 4 * 4 * 2];
        v[5] = 1.0;
        v[9] = 1.0;
        assert_eq!(select_action(&qmap(v, 4, 2)), ActionIndex::new(0, 2, 1));
    }

    #[test]
    fn first_cell_pose() {
        let g = MapGeometry::scene();
        let p = index_to_pose(ActionIndex::new(0, 0, 0), &g, 16, AngleRange::Full).unwrap();
        assert!((p.x - 0.001953125).abs() < 1e-9 && (p.y - 0.001953125).abs() < 1e-9 && p.theta == 0.0);
        let p = index_to_pose(ActionIndex::new(0, 0, 4), &g, 16, AngleRange::Full).unwrap();
        assert!((p.theta - FRAC_PI_2).abs() < 1e-12);
        let p = index_to_pose(ActionIndex::new(0, 0, 8), &g, 16, AngleRange::Half).unwrap();
        assert!((p.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_rejected() {
        let g = MapGeometry::scene();
        assert!(index_to_pose(ActionIndex::new(64, 0, 0), &g, 16, AngleRange::Full).is_err());
        assert!(index_to_pose(ActionIndex::new(0, 0, 16), &g, 16, AngleRange::Full).is_err());
        let off = ActionPose { x: -0.01, y: 0.1, theta: 0.0 };
        assert!(pose_to_index(off, &g, 16, AngleRange::Full).is_err());
    }

    #[test]
    fn exhaustive_round_trip() {
        let g = MapGeometry::scene();
        for range in [AngleRange::Full, AngleRange::Half] {
            for i in 0..64 {
                for j in 0..64 {
                    for k in 0..16 {
                        let idx = ActionIndex::new(i, j, k);
                        let pose = index_to_pose(idx, &g, 16, range).unwrap();
                        assert!(pose.theta >= 0.0 && pose.theta < range.span());
                        assert_eq!(pose_to_index(pose, &g, 16, range).unwrap(), idx);
                    }
                }
            }
        }
    }

    #[test]
    fn random_policy_is_uniform_and_seeded() {
        let g = MapGeometry::scene();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10_000).map(|_| random_policy(&g, AngleRange::Full, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        let mean_x = a.iter().map(|p| p.x).sum::<f64>() / a.len() as f64;
        assert!((mean_x - 0.125).abs() <= 0.01 * 0.125, "mean x {mean_x}");
        assert!(a.iter().all(|p| g.contains(Vec2::new(p.x, p.y)) && p.theta < 2.0 * PI));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..10_000).all(|_| random_policy(&g, AngleRange::Half, &mut rng).theta < PI));
    }

    fn world_with_object_at(x: f64, y: f64) -> WorldState {
        let mut w = WorldState::new(0);
        place_object(&mut w, ShapeSpec::new(SeedShape::T, 1.0, 1.0), Pose2::new(x, y, 0.7), Role::Target);
        w
    }

    #[test]
    fn scripted_grasp_targets_centroid() {
        let w = world_with_object_at(0.10, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = scripted_policy(&w, StepKind::Grasp, &mut rng).unwrap();
        assert!((p.x - 0.10).abs() < 1e-9 && (p.y - 0.15).abs() < 1e-9);
    }

    #[test]
    fn scripted_push_offsets_behind_object() {
        let w = world_with_object_at(0.10, 0.15);
        let t = scripted_target(&w, StepKind::Push).unwrap();
        assert!((t.x - (-0.02)).abs() < 1e-9 && (t.y - 0.15).abs() < 1e-9);
        // the executed pose is clamped into the workspace
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = scripted_policy(&w, StepKind::Push, &mut rng).unwrap();
        assert!(p.x >= 0.0 && p.x < 0.25 && (p.y - 0.15).abs() < 1e-9);
        let w = world_with_object_at(0.20, 0.05);
        let p = scripted_policy(&w, StepKind::Push, &mut rng).unwrap();
        assert!((p.x - 0.08).abs() < 1e-9);
    }

    #[test]
    fn scripted_needs_an_object() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(scripted_policy(&WorldState::new(0), StepKind::Grasp, &mut rng), Err(PolicyError::NoTarget));
    }

    #[test]
    fn scripted_angle_passes_chi_square() {
        let w = world_with_object_at(0.12, 0.12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut bins = [0usize; 16];
        let n = 10_000;
        for _ in 0..n {
            let p = scripted_policy(&w, StepKind::Grasp, &mut rng).unwrap();
            bins[((p.theta / (2.0 * PI)) * 16.0) as usize] += 1;
        }
        let e = n as f64 / 16.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 15 degrees of freedom
        assert!(chi2 < 30.578, "chi2 {chi2}");
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert_eq!("grasp->push".parse::<Task>().unwrap(), Task::GraspPush);
        assert!("lift".parse::<Task>().is_err());
    }

    #[test]
    fn step_kinds() {
        assert_eq!(Task::GraspGrasp.final_kind(), StepKind::BimanualGrasp);
        assert_eq!(Task::GraspPush.step_kind(0), StepKind::ToolPickup);
        assert_eq!(Task::GraspPush.final_kind(), StepKind::Push);
        assert_eq!(Task::Grasp.final_kind().angle_range(), AngleRange::Full);
        assert_eq!(StepKind::BimanualGrasp.angle_range(), AngleRange::Half);
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_maps(vals in prop::collection::vec(0.0f32..1.0, 4 * 4 * 3)) {
            let a = select_action(&qmap(vals.clone(), 4, 3));
            let b = select_action(&qmap(vals.iter().map(|v| (3.0 * v + 1.0).powi(3)).collect(), 4, 3));
            prop_assert_eq!(a, b);
            // exhaustive scan oracle
            let best = vals.iter().cloned().fold(f32::MIN, f32::max);
            let first = vals.iter().position(|&v| v == best).unwrap();
            prop_assert_eq!(a.flat(4, 3), first);
        }

        #[test]
        fn returned_poses_lie_inside_bounds(seed in any::<u64>(), x in 0.0f64..0.25, y in 0.0f64..0.25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = world_with_object_at(x, y);
            let g = MapGeometry::scene();
            for kind in [StepKind::Grasp, StepKind::Push, StepKind::BimanualGrasp] {
                let p = scripted_policy(&w, kind, &mut rng).unwrap();
                prop_assert!(g.contains(Vec2::new(p.x, p.y)));
                prop_assert!(pose_to_index(p, &g, 16, kind.angle_range()).is_ok());
            }
            let p = random_policy(&g, AngleRange::Full, &mut rng);
            prop_assert!(g.contains(Vec2::new(p.x, p.y)));
        }
    }
}
