use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Polygon, Vec2};

/// Unscaled limb width of every seed shape.
pub const BASE_LIMB_WIDTH: f64 = 0.03;
/// Unscaled long-side length of the seed shapes.
pub const BASE_LENGTH: f64 = 0.10;
pub const PRISM_HEIGHT: f64 = 0.03;
pub const SCALE_MIN: f64 = 0.5;
pub const SCALE_MAX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeedShape {
    I,
    L,
    T,
}

impl SeedShape {
    pub const ALL: [SeedShape; 3] = [SeedShape::I, SeedShape::L, SeedShape::T];
}

/// Procedural object: a seed outline scaled independently along its local
/// x and y axes and extruded to a flat prism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub seed_shape: SeedShape,
    pub scale_x: f64,
    pub scale_y: f64,
    pub limb_width: f64,
    pub prism_height: f64,
}

impl ShapeSpec {
    pub fn new(seed_shape: SeedShape, scale_x: f64, scale_y: f64) -> Self {
        Self {
            seed_shape,
            scale_x,
            scale_y,
            limb_width: BASE_LIMB_WIDTH,
            prism_height: PRISM_HEIGHT,
        }
    }

    /// Uniform seed shape (or the given one) with uniform scales.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, seed: Option<SeedShape>) -> Self {
        let pick = rng.gen_range(0..SeedShape::ALL.len());
        let seed_shape = seed.unwrap_or(SeedShape::ALL[pick]);
        let scale_x = rng.gen_range(SCALE_MIN..SCALE_MAX);
        let scale_y = rng.gen_range(SCALE_MIN..SCALE_MAX);
        Self::new(seed_shape, scale_x, scale_y)
    }

    /// Unscaled convex rectangles `(x0, y0, x1, y1)` making up the outline.
    fn raw_rects(&self) -> Vec<[f64; 4]> {
        let w = self.limb_width;
        let l = BASE_LENGTH;
        match self.seed_shape {
            SeedShape::I => vec![[0.0, 0.0, l, w]],
            SeedShape::L => vec![[0.0, 0.0, w, l], [w, 0.0, 0.7 * l, w]],
            SeedShape::T => vec![[-w / 2.0, 0.0, w / 2.0, 0.7 * l], [-l / 2.0, 0.7 * l, l / 2.0, 0.7 * l + w]],
        }
    }

    fn raw_outline(&self) -> Vec<Vec2> {
        let w = self.limb_width;
        let l = BASE_LENGTH;
        let v = |x, y| Vec2::new(x, y);
        match self.seed_shape {
            SeedShape::I => vec![v(0.0, 0.0), v(l, 0.0), v(l, w), v(0.0, w)],
            SeedShape::L => vec![v(0.0, 0.0), v(0.7 * l, 0.0), v(0.7 * l, w), v(w, w), v(w, l), v(0.0, l)],
            SeedShape::T => vec![
                v(-w / 2.0, 0.0),
                v(w / 2.0, 0.0),
                v(w / 2.0, 0.7 * l),
                v(l / 2.0, 0.7 * l),
                v(l / 2.0, 0.7 * l + w),
                v(-l / 2.0, 0.7 * l + w),
                v(-l / 2.0, 0.7 * l),
                v(-w / 2.0, 0.7 * l),
            ],
        }
    }

    fn scale(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x * self.scale_x, p.y * self.scale_y)
    }

    fn raw_centroid(&self) -> Vec2 {
        let outline = Polygon::new(self.raw_outline().into_iter().map(|p| self.scale(p)).collect());
        outline.centroid()
    }

    /// Simple outline polygon in the object frame (area centroid at origin).
    pub fn outline(&self) -> Polygon {
        let c = self.raw_centroid();
        Polygon::new(self.raw_outline().into_iter().map(|p| self.scale(p) - c).collect())
    }

    /// Convex decomposition of the outline in the object frame.
    pub fn parts(&self) -> Vec<Polygon> {
        let c = self.raw_centroid();
        self.raw_rects()
            .into_iter()
            .map(|[x0, y0, x1, y1]| {
                let a = self.scale(Vec2::new(x0, y0)) - c;
                let b = self.scale(Vec2::new(x1, y1)) - c;
                Polygon::rect((a + b) * 0.5, b.x - a.x, b.y - a.y)
            })
            .collect()
    }

    /// Largest distance from the object origin to a vertex.
    pub fn circumradius(&self) -> f64 {
        self.outline().vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parts_tile_outline_area() {
        for s in SeedShape::ALL {
            let spec = ShapeSpec::new(s, 1.3, 0.7);
            let parts: f64 = spec.parts().iter().map(|p| p.area()).sum();
            assert!((parts - spec.outline().area()).abs() < 1e-12, "{s:?}");
            let c = spec.outline().centroid();
            assert!(c.norm() < 1e-12);
        }
    }

    #[test]
    fn bar_dimensions() {
        let spec = ShapeSpec::new(SeedShape::I, 1.0, 1.0);
        let (lo, hi) = spec.outline().bbox();
        assert!((hi.x - lo.x - 0.10).abs() < 1e-12);
        assert!((hi.y - lo.y - 0.03).abs() < 1e-12);
    }
}
