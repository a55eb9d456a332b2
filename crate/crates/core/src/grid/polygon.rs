//! Planar geometry primitives: points, rigid poses and polygons.
//!
//! Polygons are stored as counter-clockwise vertex loops. Contact queries
//! (`overlaps`, `sweep_contact`) assume convex polygons and use separating
//! axes; compound shapes are represented as unions of convex parts.

use std::f64::consts::TAU;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Rotate counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Rigid planar transform: rotation by `theta` followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        p.rotate(self.theta) + self.position()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = self.apply(other.position());
        Pose2::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2 {
        let t = (-self.position()).rotate(-self.theta);
        Pose2::new(t.x, t.y, -self.theta)
    }

    pub fn normalized(&self) -> Pose2 {
        Pose2::new(self.x, self.y, normalize_angle(self.theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        let mut p = Self { vertices };
        if p.signed_area() < 0.0 {
            p.vertices.reverse();
        }
        p
    }

    /// Axis-aligned rectangle centered at `center`.
    pub fn rect(center: Vec2, width: f64, height: f64) -> Self {
        let (hx, hy) = (width / 2.0, height / 2.0);
        Self::new(vec![
            Vec2::new(center.x - hx, center.y - hy),
            Vec2::new(center.x + hx, center.y - hy),
            Vec2::new(center.x + hx, center.y + hy),
            Vec2::new(center.x - hx, center.y + hy),
        ])
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut a = 0.0;
        for i in 0..n {
            a += self.vertices[i].cross(self.vertices[(i + 1) % n]);
        }
        a / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let a = self.signed_area();
        if a.abs() < 1e-18 {
            let s = self.vertices.iter().fold(Vec2::ZERO, |acc, &v| acc + v);
            return s * (1.0 / n.max(1) as f64);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let c = p.cross(q);
            cx += (p.x + q.x) * c;
            cy += (p.y + q.y) * c;
        }
        Vec2::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn transformed(&self, pose: &Pose2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&v| pose.apply(v)).collect(),
        }
    }

    pub fn translated(&self, d: Vec2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&v| v + d).collect(),
        }
    }

    /// (min, max) corners of the bounding box.
    pub fn bbox(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Even-odd crossing test. Works for any simple polygon.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[j];
            if (a.y > p.y) != (b.y > p.y) {
                let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let d = v.dot(axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }

    fn edge_normals(&self) -> impl Iterator<Item = Vec2> + '_ {
        let n = self.vertices.len();
        (0..n).filter_map(move |i| {
            let e = self.vertices[(i + 1) % n] - self.vertices[i];
            let len = e.norm();
            (len > 1e-15).then(|| Vec2::new(e.y / len, -e.x / len))
        })
    }

    /// Closed-set overlap test for convex polygons (touching counts).
    pub fn overlaps(&self, other: &Polygon) -> bool {
        self.sweep_contact(other, Vec2::ZERO, 0.0).is_some()
    }

    /// First contact of convex `self` translated along `dir * t`, `t ∈ [0, max_t]`,
    /// against static convex `other`. Returns the smallest such `t`, or `None`
    /// if the two never touch. Already-overlapping shapes report `Some(0.0)`.
    pub fn sweep_contact(&self, other: &Polygon, dir: Vec2, max_t: f64) -> Option<f64> {
        if self.vertices.len() < 3 || other.vertices.len() < 3 {
            return None;
        }
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for axis in self.edge_normals().chain(other.edge_normals()) {
            let (a_lo, a_hi) = self.project(axis);
            let (b_lo, b_hi) = other.project(axis);
            let v = dir.dot(axis);
            if v.abs() < 1e-15 {
                if a_hi < b_lo || b_hi < a_lo {
                    return None;
                }
                continue;
            }
            // intervals overlap while a_lo + v t <= b_hi and a_hi + v t >= b_lo
            let t0 = (b_lo - a_hi) / v;
            let t1 = (b_hi - a_lo) / v;
            let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            t_enter = t_enter.max(lo);
            t_exit = t_exit.min(hi);
            if t_enter > t_exit {
                return None;
            }
        }
        if t_exit < 0.0 || t_enter > max_t {
            return None;
        }
        Some(t_enter.max(0.0))
    }
}
