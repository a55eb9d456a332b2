//! Deterministic planar manipulation world.
//!
//! Two arms share a square workspace. Each step spawns at most one free
//! object; actions are open-loop primitives evaluated geometrically:
//! grasps by a jaw-closure sweep, pushes by a quasi-static leading-edge sweep
//! along +x. Grasped tools become rigid extensions of the gripper.

mod shape;

pub use shape::{SeedShape, ShapeSpec, BASE_LENGTH, BASE_LIMB_WIDTH, PRISM_HEIGHT, SCALE_MAX, SCALE_MIN};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

use crate::grid::{normalize_angle, MapGeometry, Polygon, Pose2, Vec2};

pub const PAD_THICKNESS: f64 = 0.02;
pub const PAD_LENGTH: f64 = 0.06;
pub const PAD_HEIGHT: f64 = 0.01;
pub const JAW_GAP_OPEN: f64 = 0.08;
pub const JAW_GAP_CLOSED: f64 = 0.005;
/// Tool-tip separation of the bi-manual pincer when open.
pub const PINCER_GAP_OPEN: f64 = 0.08;
pub const PUSH_DISTANCE: f64 = 0.30;
pub const PUSH_SUCCESS_DISPLACEMENT: f64 = 0.10;
pub const SLIP_RATIO: f64 = 0.25;
pub const DEFLECTION_FACTOR: f64 = 0.5;
pub const ARM_SPACING: f64 = 1.0;
pub const REACH_RADIUS: f64 = 0.65;
/// Bodies whose first contact lies within this distance of the earliest
/// contact form the leading edge of a push.
const LEADING_EDGE_TOLERANCE: f64 = 0.005;
const SPAWN_RETRIES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Target,
    Tool,
    HeldTool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub shape: ShapeSpec,
    pub pose: Pose2,
    pub role: Role,
}

impl ObjectState {
    pub fn world_parts(&self) -> Vec<Polygon> {
        self.shape.parts().iter().map(|p| p.transformed(&self.pose)).collect()
    }

    pub fn world_outline(&self) -> Polygon {
        self.shape.outline().transformed(&self.pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArmId {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jaw {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldTool {
    pub object: ObjectState,
    /// Tool pose expressed in the gripper frame.
    pub attachment: Pose2,
    /// Pad inner-face separation while clamped on the tool.
    pub grip_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub arm_id: ArmId,
    pub gripper_pose: Pose2,
    pub jaw: Jaw,
    pub jaw_gap_open: f64,
    pub jaw_gap_closed: f64,
    /// Pad extent (along the closing axis, across it).
    pub finger_pad: (f64, f64),
    pub held_tool: Option<HeldTool>,
    pub reach_center: Vec2,
    pub reach_radius: f64,
}

/// A piece of end-effector geometry with its contact permission.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub shape: Polygon,
    /// Mask value: true where contact with the target is permitted.
    pub allowed: bool,
    pub is_tool: bool,
}

impl ArmState {
    pub fn new(arm_id: ArmId, reach_center: Vec2) -> Self {
        Self {
            arm_id,
            gripper_pose: Pose2::new(reach_center.x, reach_center.y, 0.0),
            jaw: Jaw::Open,
            jaw_gap_open: JAW_GAP_OPEN,
            jaw_gap_closed: JAW_GAP_CLOSED,
            finger_pad: (PAD_THICKNESS, PAD_LENGTH),
            held_tool: None,
            reach_center,
            reach_radius: REACH_RADIUS,
        }
    }

    pub fn can_reach(&self, p: Vec2) -> bool {
        (p - self.reach_center).norm() <= self.reach_radius
    }

    /// Move the gripper; a held tool follows rigidly.
    pub fn move_to(&mut self, pose: Pose2) {
        self.gripper_pose = pose.normalized();
        if let Some(h) = &mut self.held_tool {
            h.object.pose = self.gripper_pose.compose(&h.attachment).normalized();
        }
    }

    /// Pads at inner-face separation `gap`, in the gripper frame.
    pub fn pads_local(&self, gap: f64) -> [Polygon; 2] {
        let (t, l) = self.finger_pad;
        let off = gap / 2.0 + t / 2.0;
        [
            Polygon::rect(Vec2::new(-off, 0.0), t, l),
            Polygon::rect(Vec2::new(off, 0.0), t, l),
        ]
    }

    /// Held-tool parts in the gripper frame.
    pub fn tool_parts_local(&self) -> Vec<Polygon> {
        match &self.held_tool {
            Some(h) => h.object.shape.parts().iter().map(|p| p.transformed(&h.attachment)).collect(),
            None => Vec::new(),
        }
    }

    pub fn tool_outline_local(&self) -> Option<Polygon> {
        self.held_tool.as_ref().map(|h| h.object.shape.outline().transformed(&h.attachment))
    }

    /// Pad separation when the jaw is closed in its current grip state.
    pub fn closed_gap(&self) -> f64 {
        self.held_tool.map_or(self.jaw_gap_closed, |h| h.grip_gap)
    }

    /// Every body of the end effector in the gripper frame, with the jaw at `gap`.
    pub fn bodies_local(&self, gap: f64) -> Vec<Body> {
        let tool_held = self.held_tool.is_some();
        let mut out: Vec<Body> = self
            .pads_local(gap)
            .into_iter()
            .map(|shape| Body {
                shape,
                allowed: !tool_held,
                is_tool: false,
            })
            .collect();
        out.extend(self.tool_parts_local().into_iter().map(|shape| Body {
            shape,
            allowed: true,
            is_tool: true,
        }));
        out
    }
}

/// Whether geometry outside the contact mask may touch the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactRules {
    pub mask0_contact_fails: bool,
}

impl Default for ContactRules {
    fn default() -> Self {
        Self {
            mask0_contact_fails: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub success: bool,
    pub illegal_contact: bool,
    pub displacement_x: f64,
    pub attached_tool: Option<ObjectState>,
}

impl ActionOutcome {
    pub fn failure() -> Self {
        Self {
            success: false,
            illegal_contact: false,
            displacement_x: 0.0,
            attached_tool: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub arms: [ArmState; 2],
    pub objects: Vec<ObjectState>,
    pub scene_geom: MapGeometry,
    pub rng_seed: u64,
}

/// Bi-manual pincer placement: each gripper pose in the pincer frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PincerLayout {
    pub left: Pose2,
    pub right: Pose2,
}

impl WorldState {
    pub fn new(rng_seed: u64) -> Self {
        let geom = MapGeometry::scene();
        let c = geom.center();
        let half = ARM_SPACING / 2.0;
        Self {
            arms: [
                ArmState::new(ArmId::Left, Vec2::new(c.x - half, c.y)),
                ArmState::new(ArmId::Right, Vec2::new(c.x + half, c.y)),
            ],
            objects: Vec::new(),
            scene_geom: geom,
            rng_seed,
        }
    }

    pub fn arm(&self, id: ArmId) -> &ArmState {
        &self.arms[id as usize]
    }

    pub fn arm_mut(&mut self, id: ArmId) -> &mut ArmState {
        &mut self.arms[id as usize]
    }

    /// The free object currently in the workspace, if any.
    pub fn scene_object(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.role != Role::HeldTool)
    }

    pub fn target(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.role == Role::Target)
    }

    /// Spawn a randomly shaped, scaled and posed object. Tools are always bars.
    pub fn spawn_object<R: Rng + ?Sized>(&mut self, role: Role, rng: &mut R) -> Result<ObjectState, SimError> {
        if role == Role::HeldTool {
            return Err(SimError::Precondition("cannot spawn a held tool".into()));
        }
        if self.objects.iter().any(|o| o.role == role) {
            return Err(SimError::Precondition(format!("a {role:?} object is already live")));
        }
        let seed = (role == Role::Tool).then_some(SeedShape::I);
        let shape = ShapeSpec::sample(rng, seed);
        let margin = shape.circumradius();
        let (lo, hi) = (self.scene_geom.bounds_min, self.scene_geom.bounds_max);
        let mut pos = self.scene_geom.center();
        for _ in 0..SPAWN_RETRIES {
            let x = rng.gen_range(lo.x..hi.x);
            let y = rng.gen_range(lo.y..hi.y);
            if x >= lo.x + margin && x <= hi.x - margin && y >= lo.y + margin && y <= hi.y - margin {
                pos = Vec2::new(x, y);
                break;
            }
        }
        let theta = rng.gen_range(0.0..TAU);
        let obj = ObjectState {
            shape,
            pose: Pose2::new(pos.x, pos.y, theta),
            role,
        };
        self.objects.push(obj);
        Ok(obj)
    }

    fn action_valid(&self, arm: ArmId, pose: &Pose2) -> bool {
        let p = pose.position();
        self.scene_geom.contains(p) && self.arm(arm).can_reach(p)
    }

    fn scene_object_index(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.role != Role::HeldTool)
    }

    /// Parallel-jaw grasp at `pose`; the jaw closes along the gripper's local x.
    pub fn grasp_primitive(&mut self, arm: ArmId, pose: Pose2, rules: ContactRules) -> ActionOutcome {
        if !self.action_valid(arm, &pose) {
            return ActionOutcome::failure();
        }
        let Some(idx) = self.scene_object_index() else {
            return ActionOutcome::failure();
        };
        let a = self.arm(arm);
        if a.held_tool.is_some() {
            // single-arm tool grasping is not a task; tools only grasp bi-manually
            return ActionOutcome::failure();
        }
        let gripper = pose.normalized();
        let object_parts = self.objects[idx].world_parts();
        let [lp, rp] = a.pads_local(a.jaw_gap_open);
        let place = |b: Polygon, allowed| Body {
            shape: b.transformed(&gripper),
            allowed,
            is_tool: false,
        };
        let closing = Vec2::new(1.0, 0.0).rotate(gripper.theta);
        let travel = (a.jaw_gap_open - a.jaw_gap_closed) / 2.0;
        let result = closure_test(
            &[place(lp, true)],
            &[place(rp, true)],
            closing,
            travel,
            &object_parts,
            rules,
        );

        let arm_state = self.arm_mut(arm);
        arm_state.move_to(gripper);
        arm_state.jaw = Jaw::Closed;
        let mut outcome = ActionOutcome {
            success: result.success,
            illegal_contact: result.illegal,
            displacement_x: 0.0,
            attached_tool: None,
        };
        if result.success && self.objects[idx].role == Role::Tool {
            let mut tool = self.objects.remove(idx);
            tool.role = Role::HeldTool;
            let attachment = gripper.inverse().compose(&tool.pose);
            let gap = self.arm(arm).jaw_gap_open - result.contact[0] - result.contact[1];
            let arm_state = self.arm_mut(arm);
            arm_state.held_tool = Some(HeldTool {
                object: tool,
                attachment,
                grip_gap: gap,
            });
            arm_state.move_to(gripper);
            outcome.attached_tool = arm_state.held_tool.map(|h| h.object);
        }
        outcome
    }

    /// Closed-gripper push from `pose`, sweeping `PUSH_DISTANCE` along world +x.
    pub fn push_primitive(&mut self, arm: ArmId, pose: Pose2, rules: ContactRules) -> ActionOutcome {
        if !self.action_valid(arm, &pose) {
            return ActionOutcome::failure();
        }
        let Some(idx) = self.scene_object_index() else {
            return ActionOutcome::failure();
        };
        let gripper = pose.normalized();
        let a = self.arm(arm);
        let bodies: Vec<Body> = a
            .bodies_local(a.closed_gap())
            .into_iter()
            .map(|b| Body {
                shape: b.shape.transformed(&gripper),
                ..b
            })
            .collect();
        let object_parts = self.objects[idx].world_parts();
        let sweep = push_sweep(&bodies, &object_parts, rules);

        let arm_state = self.arm_mut(arm);
        arm_state.jaw = Jaw::Closed;
        arm_state.move_to(Pose2::new(gripper.x + PUSH_DISTANCE, gripper.y, gripper.theta));
        if sweep.displacement_x > 0.0 {
            self.objects[idx].pose.x += sweep.displacement_x;
        }
        ActionOutcome {
            success: sweep.displacement_x >= PUSH_SUCCESS_DISPLACEMENT && !sweep.illegal && !sweep.blocked,
            illegal_contact: sweep.illegal,
            displacement_x: sweep.displacement_x,
            attached_tool: None,
        }
    }

    /// Gripper poses of the bi-manual pincer in its own frame. The left gripper
    /// faces the pincer center with its local +y, the right one is its half-turn
    /// image; each tool tip (innermost tool point along the closing axis) sits
    /// at `±separation/2`.
    pub fn pincer_layout(&self, separation: f64) -> Result<PincerLayout, SimError> {
        let [l, r] = &self.arms;
        let tip = |arm: &ArmState| -> Result<f64, SimError> {
            let outline = arm
                .tool_outline_local()
                .ok_or_else(|| SimError::Precondition(format!("{:?} arm holds no tool", arm.arm_id)))?;
            Ok(outline
                .vertices
                .iter()
                .map(|v| v.rotate(-FRAC_PI_2).x)
                .fold(f64::NEG_INFINITY, f64::max))
        };
        let (tl, tr) = (tip(l)?, tip(r)?);
        Ok(PincerLayout {
            left: Pose2::new(-separation / 2.0 - tl, 0.0, -FRAC_PI_2),
            right: Pose2::new(separation / 2.0 + tr, 0.0, FRAC_PI_2),
        })
    }

    /// Two-arm grasp with the held tools acting as fingers. Orientation must lie in `[0, π)`.
    pub fn bimanual_grasp_primitive(&mut self, pose: Pose2, rules: ContactRules) -> Result<ActionOutcome, SimError> {
        if !(0.0..PI).contains(&pose.theta) {
            return Err(SimError::Precondition(format!("bi-manual orientation {} outside [0, π)", pose.theta)));
        }
        let layout = self.pincer_layout(PINCER_GAP_OPEN)?;
        if !self.scene_geom.contains(pose.position()) {
            return Ok(ActionOutcome::failure());
        }
        let left_pose = pose.compose(&layout.left).normalized();
        let right_pose = pose.compose(&layout.right).normalized();
        if !self.arm(ArmId::Left).can_reach(left_pose.position()) || !self.arm(ArmId::Right).can_reach(right_pose.position()) {
            return Ok(ActionOutcome::failure());
        }
        let Some(idx) = self.scene_object_index() else {
            return Ok(ActionOutcome::failure());
        };
        let place = |arm: &ArmState, at: &Pose2| -> Vec<Body> {
            arm.bodies_local(arm.closed_gap())
                .into_iter()
                .map(|b| Body {
                    shape: b.shape.transformed(at),
                    ..b
                })
                .collect()
        };
        let left = place(self.arm(ArmId::Left), &left_pose);
        let right = place(self.arm(ArmId::Right), &right_pose);
        let closing = Vec2::new(1.0, 0.0).rotate(pose.theta);
        let travel = (PINCER_GAP_OPEN - JAW_GAP_CLOSED) / 2.0;
        let object_parts = self.objects[idx].world_parts();
        let result = closure_test(&left, &right, closing, travel, &object_parts, rules);
        self.arm_mut(ArmId::Left).move_to(left_pose);
        self.arm_mut(ArmId::Right).move_to(right_pose);
        Ok(ActionOutcome {
            success: result.success,
            illegal_contact: result.illegal,
            displacement_x: 0.0,
            attached_tool: None,
        })
    }
}

fn first_contact(body: &Polygon, parts: &[Polygon], dir: Vec2, max_t: f64) -> Option<f64> {
    parts
        .iter()
        .filter_map(|p| body.sweep_contact(p, dir, max_t))
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureResult {
    pub success: bool,
    pub illegal: bool,
    /// Travel of each side until its permitted geometry touched the object.
    pub contact: [f64; 2],
}

/// Jaw-closure test. `left` moves along `closing`, `right` against it, each by
/// at most `travel`. Success needs both sides' permitted bodies to reach the
/// object without any body overlapping it at the open placement.
pub fn closure_test(
    left: &[Body],
    right: &[Body],
    closing: Vec2,
    travel: f64,
    object: &[Polygon],
    rules: ContactRules,
) -> ClosureResult {
    let mut success = true;
    let mut illegal = false;
    let mut contact = [f64::INFINITY; 2];
    for (side, (bodies, dir)) in [(left, closing), (right, -closing)].into_iter().enumerate() {
        let mut allowed_t = f64::INFINITY;
        let mut forbidden_t = f64::INFINITY;
        for b in bodies {
            if let Some(t) = first_contact(&b.shape, object, dir, travel) {
                if b.allowed {
                    allowed_t = allowed_t.min(t);
                } else {
                    forbidden_t = forbidden_t.min(t);
                }
            }
        }
        if forbidden_t.is_finite() && forbidden_t <= allowed_t {
            if rules.mask0_contact_fails {
                illegal = true;
            }
            success = false;
        }
        // zero travel means the footprint already overlaps: approach collision
        if !allowed_t.is_finite() || allowed_t <= 0.0 || forbidden_t <= 0.0 {
            success = false;
        }
        contact[side] = allowed_t;
    }
    ClosureResult {
        success: success && !illegal,
        illegal,
        contact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushSweep {
    /// Gap to first contact, `None` if the sweep never touches the object.
    pub gap: Option<f64>,
    pub overlap_ratio: f64,
    pub displacement_x: f64,
    pub illegal: bool,
    /// Pusher overlapped the object at its start pose.
    pub blocked: bool,
}

/// Displacement from the leading-edge model given the first-contact gap and
/// the y-overlap ratio at contact.
pub fn push_displacement(gap: f64, overlap_ratio: f64) -> f64 {
    let free = PUSH_DISTANCE - gap;
    if overlap_ratio >= SLIP_RATIO {
        free.max(0.0)
    } else if overlap_ratio > 0.0 {
        (DEFLECTION_FACTOR * free).max(0.0)
    } else {
        0.0
    }
}

pub fn push_sweep(bodies: &[Body], object: &[Polygon], rules: ContactRules) -> PushSweep {
    let dir = Vec2::new(1.0, 0.0);
    let contacts: Vec<Option<f64>> = bodies
        .iter()
        .map(|b| first_contact(&b.shape, object, dir, PUSH_DISTANCE))
        .collect();
    let gap = contacts.iter().flatten().fold(None, |acc: Option<f64>, &t| Some(acc.map_or(t, |a| a.min(t))));
    let Some(g) = gap else {
        return PushSweep {
            gap: None,
            overlap_ratio: 0.0,
            displacement_x: 0.0,
            illegal: false,
            blocked: false,
        };
    };
    let leading: Vec<&Body> = bodies
        .iter()
        .zip(&contacts)
        .filter(|(_, t)| t.is_some_and(|t| t <= g + LEADING_EDGE_TOLERANCE))
        .map(|(b, _)| b)
        .collect();
    let first_forbidden = bodies
        .iter()
        .zip(&contacts)
        .any(|(b, t)| !b.allowed && t.is_some_and(|t| t <= g));
    let illegal = rules.mask0_contact_fails && first_forbidden;
    let blocked = g <= 0.0;

    let (mut e_lo, mut e_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for b in &leading {
        let (lo, hi) = b.shape.bbox();
        e_lo = e_lo.min(lo.y);
        e_hi = e_hi.max(hi.y);
    }
    let (mut o_lo, mut o_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in object {
        let (lo, hi) = p.bbox();
        o_lo = o_lo.min(lo.y);
        o_hi = o_hi.max(hi.y);
    }
    let w = (e_hi.min(o_hi) - e_lo.max(o_lo)).max(0.0);
    let ratio = if o_hi > o_lo { w / (o_hi - o_lo) } else { 0.0 };
    let displacement_x = if blocked { 0.0 } else { push_displacement(g, ratio) };
    PushSweep {
        gap: Some(g),
        overlap_ratio: ratio,
        displacement_x,
        illegal,
        blocked,
    }
}

/// Convenience for tests and scripted setups: place an object explicitly.
pub fn place_object(world: &mut WorldState, shape: ShapeSpec, pose: Pose2, role: Role) -> ObjectState {
    let obj = ObjectState {
        shape,
        pose: Pose2::new(pose.x, pose.y, normalize_angle(pose.theta)),
        role,
    };
    world.objects.push(obj);
    obj
}
