//! Observation maps shared by gripper use and tool use.
//!
//! The end effector is four channels over a 0.5 m window centered on the
//! gripper: depth and contact mask, each in the open and closed configuration.
//! In tool use only tool pixels are masked in; the scene is a single heightmap.

use thiserror::Error;

use crate::grid::{render_into, rotate_map, GridError, GridMap, GridTensor, Interp, MapGeometry, Polygon, Pose2};
use crate::sim::{ArmId, ArmState, WorldState, JAW_GAP_CLOSED, PAD_HEIGHT, PINCER_GAP_OPEN};

pub const EE_CHANNELS: usize = 4;

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("bi-manual end effector needs both arms to hold tools")]
    MissingTool,
    #[error("expected a {expected} tensor, got {got}")]
    Shape { expected: String, got: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Which end effector to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EeSource {
    Arm(ArmId),
    /// Both arms acting as one pincer, each holding a tool.
    Pincer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndEffectorRepr {
    pub depth_open: GridMap,
    pub mask_open: GridMap,
    pub depth_closed: GridMap,
    pub mask_closed: GridMap,
}

impl EndEffectorRepr {
    /// Channels in fixed order: depth_open, mask_open, depth_closed, mask_closed.
    pub fn channels(&self) -> [&GridMap; 4] {
        [&self.depth_open, &self.mask_open, &self.depth_closed, &self.mask_closed]
    }

    pub fn to_tensor(&self) -> GridTensor {
        GridTensor::from_maps(&self.channels()).expect("channels share a geometry")
    }

    pub fn from_tensor(t: &GridTensor) -> Result<Self, ReprError> {
        let g = MapGeometry::end_effector();
        if t.height != g.resolution || t.width != g.resolution || t.channels != EE_CHANNELS {
            return Err(ReprError::Shape {
                expected: format!("{0}x{0}x{EE_CHANNELS}", g.resolution),
                got: format!("{}x{}x{}", t.height, t.width, t.channels),
            });
        }
        let ch = |c: usize| {
            let mut m = g.zeros();
            m.values = t.channel(c);
            m
        };
        Ok(Self {
            depth_open: ch(0),
            mask_open: ch(1),
            depth_closed: ch(2),
            mask_closed: ch(3),
        })
    }

    /// Rotate every channel about the map center: depth bilinear, masks nearest.
    pub fn rotated(&self, angle: f64) -> Result<Self, ReprError> {
        Ok(Self {
            depth_open: rotate_map(&self.depth_open, angle, Interp::Bilinear)?,
            mask_open: rotate_map(&self.mask_open, angle, Interp::Nearest)?,
            depth_closed: rotate_map(&self.depth_closed, angle, Interp::Bilinear)?,
            mask_closed: rotate_map(&self.mask_closed, angle, Interp::Nearest)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObs {
    pub height: GridMap,
}

impl SceneObs {
    pub fn to_tensor(&self) -> GridTensor {
        GridTensor::from_maps(&[&self.height]).expect("single channel")
    }

    pub fn from_tensor(t: &GridTensor) -> Result<Self, ReprError> {
        let g = MapGeometry::scene();
        if t.height != g.resolution || t.width != g.resolution || t.channels != 1 {
            return Err(ReprError::Shape {
                expected: format!("{0}x{0}x1", g.resolution),
                got: format!("{}x{}x{}", t.height, t.width, t.channels),
            });
        }
        let mut height = g.zeros();
        height.values = t.values.clone();
        Ok(Self { height })
    }
}

/// Top-down heightmap of every free object; held tools and arms are excluded.
pub fn render_scene(world: &WorldState) -> SceneObs {
    let geom = world.scene_geom;
    let mut height = geom.zeros();
    for obj in world.objects.iter().filter(|o| o.role != crate::sim::Role::HeldTool) {
        let h = obj.shape.prism_height.min(geom.height_clip) as f32;
        for part in obj.world_parts() {
            render_into(&mut height, &part, h);
        }
    }
    SceneObs { height }
}

struct Layer {
    shapes: Vec<Polygon>,
    depth: f32,
    mask: bool,
}

fn arm_layers(arm: &ArmState, gap: f64, at: &Pose2) -> Vec<Layer> {
    let tool_held = arm.held_tool.is_some();
    let mut out = vec![Layer {
        shapes: arm.pads_local(gap).iter().map(|p| p.transformed(at)).collect(),
        depth: PAD_HEIGHT as f32,
        mask: !tool_held,
    }];
    if let Some(h) = &arm.held_tool {
        out.push(Layer {
            shapes: arm.tool_parts_local().iter().map(|p| p.transformed(at)).collect(),
            depth: h.object.shape.prism_height as f32,
            mask: true,
        });
    }
    out
}

fn rasterize(layers: &[Layer]) -> (GridMap, GridMap) {
    let geom = MapGeometry::end_effector();
    let mut depth = geom.zeros();
    let mut mask = geom.zeros();
    for layer in layers {
        for s in &layer.shapes {
            render_into(&mut depth, s, layer.depth.min(geom.height_clip as f32));
            if layer.mask {
                render_into(&mut mask, s, 1.0);
            }
        }
    }
    (depth, mask)
}

/// Render the end effector in its own frame at canonical orientation.
pub fn render_end_effector(world: &WorldState, source: EeSource) -> Result<EndEffectorRepr, ReprError> {
    let (open, closed) = match source {
        EeSource::Arm(id) => {
            let arm = world.arm(id);
            let open = arm_layers(arm, arm.jaw_gap_open, &Pose2::IDENTITY);
            let closed = arm_layers(arm, arm.closed_gap(), &Pose2::IDENTITY);
            (open, closed)
        }
        EeSource::Pincer => {
            let [l, r] = &world.arms;
            if l.held_tool.is_none() || r.held_tool.is_none() {
                return Err(ReprError::MissingTool);
            }
            let layers = |sep: f64| -> Result<Vec<Layer>, ReprError> {
                let layout = world.pincer_layout(sep).map_err(|_| ReprError::MissingTool)?;
                let mut v = arm_layers(l, l.closed_gap(), &layout.left);
                v.extend(arm_layers(r, r.closed_gap(), &layout.right));
                Ok(v)
            };
            (layers(PINCER_GAP_OPEN)?, layers(JAW_GAP_CLOSED)?)
        }
    };
    let (depth_open, mask_open) = rasterize(&open);
    let (depth_closed, mask_closed) = rasterize(&closed);
    Ok(EndEffectorRepr {
        depth_open,
        mask_open,
        depth_closed,
        mask_closed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Vec2;
    use crate::sim::{place_object, HeldTool, ObjectState, Role, SeedShape, ShapeSpec, PRISM_HEIGHT};
    use std::f64::consts::FRAC_PI_2;

    fn give_stick(w: &mut WorldState, arm: ArmId, along: f64) {
        let a = w.arm_mut(arm);
        a.held_tool = Some(HeldTool {
            object: ObjectState {
                shape: ShapeSpec::new(SeedShape::I, 1.2, 1.0),
                pose: Pose2::IDENTITY,
                role: Role::HeldTool,
            },
            attachment: Pose2::new(0.0, along, FRAC_PI_2),
            grip_gap: 0.03,
        });
        a.move_to(a.gripper_pose);
    }

    /// Count connected components of nonzero pixels (4-neighborhood).
    fn components(m: &GridMap) -> usize {
        let mut seen = vec![false; m.values.len()];
        let mut n = 0;
        for start in 0..m.values.len() {
            if m.values[start] == 0.0 || seen[start] {
                continue;
            }
            n += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(k) = stack.pop() {
                let (r, c) = (k / m.width, k % m.width);
                let mut nb = Vec::new();
                if r > 0 {
                    nb.push(k - m.width);
                }
                if r + 1 < m.height {
                    nb.push(k + m.width);
                }
                if c > 0 {
                    nb.push(k - 1);
                }
                if c + 1 < m.width {
                    nb.push(k + 1);
                }
                for q in nb {
                    if m.values[q] != 0.0 && !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        n
    }

    fn check_invariants(e: &EndEffectorRepr) {
        for (d, m) in [(&e.depth_open, &e.mask_open), (&e.depth_closed, &e.mask_closed)] {
            assert!(m.is_binary());
            for (dv, mv) in d.values.iter().zip(&m.values) {
                assert!(*mv == 0.0 || *dv > 0.0);
                assert!(*dv >= 0.0 && dv.is_finite());
            }
        }
        let (a, b) = (e.mask_open.count_nonzero() as f64, e.mask_closed.count_nonzero() as f64);
        assert!((a - b).abs() <= 0.05 * a.max(b), "mask counts {a} vs {b}");
    }

    #[test]
    fn empty_scene_is_flat() {
        let w = WorldState::new(0);
        assert_eq!(render_scene(&w).height.count_nonzero(), 0);
    }

    #[test]
    fn object_heights_uniform() {
        let mut w = WorldState::new(0);
        place_object(&mut w, ShapeSpec::new(SeedShape::T, 1.0, 1.0), Pose2::new(0.12, 0.13, 0.4), Role::Target);
        let s = render_scene(&w);
        assert!(s.height.count_nonzero() > 0);
        assert!(s.height.values.iter().all(|&v| v == 0.0 || v == PRISM_HEIGHT as f32));
    }

    #[test]
    fn straddling_object_clipped() {
        let mut w = WorldState::new(0);
        let obj = place_object(&mut w, ShapeSpec::new(SeedShape::I, 1.5, 1.0), Pose2::new(0.01, 0.1, 0.0), Role::Target);
        let s = render_scene(&w);
        // oracle: clipped point-in-polygon scan over in-bounds cell centers
        let outline = obj.world_outline();
        let g = w.scene_geom;
        let mut expected = 0;
        for row in 0..g.resolution {
            for col in 0..g.resolution {
                if outline.contains(g.pixel_to_world(crate::grid::Pixel { row, col })) {
                    expected += 1;
                }
            }
        }
        assert_eq!(s.height.count_nonzero(), expected);
        assert!(expected > 0);
    }

    #[test]
    fn held_tools_not_in_scene() {
        let mut w = WorldState::new(0);
        give_stick(&mut w, ArmId::Left, 0.0);
        w.objects.push(w.arm(ArmId::Left).held_tool.unwrap().object);
        assert_eq!(render_scene(&w).height.count_nonzero(), 0);
    }

    #[test]
    fn bare_gripper_is_two_masked_rectangles() {
        let w = WorldState::new(0);
        let e = render_end_effector(&w, EeSource::Arm(ArmId::Left)).unwrap();
        assert_eq!(components(&e.depth_open), 2);
        assert_eq!(e.mask_open, {
            let mut m = e.depth_open.clone();
            m.values.iter_mut().for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
            m
        });
        // closed pads sit 5 mm apart, about one pixel: they may touch
        assert!(components(&e.depth_closed) <= 2);
        check_invariants(&e);
    }

    #[test]
    fn bare_gripper_ignores_world_objects() {
        let mut w = WorldState::new(0);
        let a = render_end_effector(&w, EeSource::Arm(ArmId::Left)).unwrap();
        place_object(&mut w, ShapeSpec::new(SeedShape::L, 1.0, 1.0), Pose2::new(0.1, 0.1, 0.0), Role::Target);
        assert_eq!(render_end_effector(&w, EeSource::Arm(ArmId::Left)).unwrap(), a);
    }

    #[test]
    fn tool_pixels_masked_pads_not() {
        let mut w = WorldState::new(0);
        give_stick(&mut w, ArmId::Left, 0.06);
        let arm = w.arm(ArmId::Left);
        let e = render_end_effector(&w, EeSource::Arm(ArmId::Left)).unwrap();
        let g = MapGeometry::end_effector();
        let tool = arm.tool_parts_local();
        let pads = arm.pads_local(arm.closed_gap());
        let mut tool_px = 0;
        let mut pad_px = 0;
        for row in 0..g.resolution {
            for col in 0..g.resolution {
                let p = g.pixel_to_world(crate::grid::Pixel { row, col });
                let in_tool = tool.iter().any(|t| t.contains(p));
                let in_pad = pads.iter().any(|t| t.contains(p));
                if in_tool {
                    tool_px += 1;
                    assert_eq!(e.mask_closed.get(row, col), 1.0);
                } else if in_pad {
                    pad_px += 1;
                    assert_eq!(e.mask_closed.get(row, col), 0.0);
                    assert!(e.depth_closed.get(row, col) > 0.0);
                }
            }
        }
        assert!(tool_px > 0 && pad_px > 0);
        check_invariants(&e);
    }

    #[test]
    fn pincer_resembles_gripper() {
        let mut w = WorldState::new(0);
        give_stick(&mut w, ArmId::Left, 0.05);
        give_stick(&mut w, ArmId::Right, 0.05);
        let e = render_end_effector(&w, EeSource::Pincer).unwrap();
        // two stick footprints separated by the open pincer gap
        assert_eq!(components(&e.mask_open), 2);
        let g = MapGeometry::end_effector();
        let row = g.world_to_pixel(Vec2::new(0.0, 0.0)).unwrap().row;
        let cols: Vec<usize> = (0..g.resolution).filter(|&c| e.mask_open.get(row, c) > 0.0).collect();
        let inner_gap = cols.windows(2).map(|w| w[1] - w[0]).max().unwrap() as f64 * g.pixel_size();
        assert!((inner_gap - PINCER_GAP_OPEN).abs() < 2.0 * g.pixel_size(), "gap {inner_gap}");
        check_invariants(&e);
    }

    #[test]
    fn pincer_needs_tools() {
        let mut w = WorldState::new(0);
        give_stick(&mut w, ArmId::Left, 0.0);
        assert!(matches!(render_end_effector(&w, EeSource::Pincer), Err(ReprError::MissingTool)));
    }

    #[test]
    fn tensor_round_trip() {
        let w = WorldState::new(0);
        let e = render_end_effector(&w, EeSource::Arm(ArmId::Right)).unwrap();
        let t = e.to_tensor();
        assert_eq!((t.height, t.width, t.channels), (112, 112, 4));
        assert_eq!(EndEffectorRepr::from_tensor(&t).unwrap(), e);
        let s = render_scene(&w).to_tensor();
        assert_eq!((s.height, s.width, s.channels), (64, 64, 1));
    }
}
