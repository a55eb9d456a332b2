//! Map geometry and rasterization.
//!
//! A [`GridMap`] is a row-major grid whose row index follows the world y axis
//! and whose column index follows world x. Pixel `(0, 0)` has its lower-left
//! corner at the map origin. Coverage is decided by cell centers only.

mod file;
mod polygon;

pub use file::{read_grid_file, write_grid_file, GridTensor};
pub use polygon::{normalize_angle, Polygon, Pose2, Vec2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid map geometry: {0}")]
    InvalidGeometry(String),
    #[error("map must be square for rotation, got {width}x{height}")]
    NotSquare { width: usize, height: usize },
    #[error("map size mismatch: {0}")]
    SizeMismatch(String),
    #[error("bad grid file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer cell address: `row` follows y, `col` follows x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

/// World point fell outside the map bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutOfBounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub bounds_min: Vec2,
    pub bounds_max: Vec2,
    pub resolution: usize,
    pub height_clip: f64,
}

impl MapGeometry {
    pub fn new(bounds_min: Vec2, bounds_max: Vec2, resolution: usize, height_clip: f64) -> Result<Self, GridError> {
        let g = Self {
            bounds_min,
            bounds_max,
            resolution,
            height_clip,
        };
        g.validate()?;
        Ok(g)
    }

    /// Scene map: 0.25 m square at 64 px, heights clipped at 0.3 m.
    pub fn scene() -> Self {
        Self {
            bounds_min: Vec2::new(0.0, 0.0),
            bounds_max: Vec2::new(0.25, 0.25),
            resolution: 64,
            height_clip: 0.3,
        }
    }

    /// End-effector map: 0.5 m square at 112 px centered on the gripper.
    pub fn end_effector() -> Self {
        Self {
            bounds_min: Vec2::new(-0.25, -0.25),
            bounds_max: Vec2::new(0.25, 0.25),
            resolution: 112,
            height_clip: 0.05,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let ext = self.bounds_max - self.bounds_min;
        if !(ext.x > 0.0 && ext.y > 0.0) {
            return Err(GridError::InvalidGeometry("bounds_max must exceed bounds_min".into()));
        }
        if self.resolution == 0 {
            return Err(GridError::InvalidGeometry("resolution must be positive".into()));
        }
        if (ext.x - ext.y).abs() > 1e-12 * ext.x.max(ext.y) {
            return Err(GridError::InvalidGeometry("bounds must be square".into()));
        }
        if !(self.height_clip > 0.0) {
            return Err(GridError::InvalidGeometry("height_clip must be positive".into()));
        }
        Ok(())
    }

    pub fn pixel_size(&self) -> f64 {
        (self.bounds_max.x - self.bounds_min.x) / self.resolution as f64
    }

    pub fn center(&self) -> Vec2 {
        (self.bounds_min + self.bounds_max) * 0.5
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.bounds_min.x && p.x < self.bounds_max.x && p.y >= self.bounds_min.y && p.y < self.bounds_max.y
    }

    /// Cell containing `p`; the upper bound is exclusive.
    pub fn world_to_pixel(&self, p: Vec2) -> Result<Pixel, OutOfBounds> {
        if !self.contains(p) {
            return Err(OutOfBounds);
        }
        let ps = self.pixel_size();
        let n = self.resolution;
        let col = (((p.x - self.bounds_min.x) / ps).floor() as usize).min(n - 1);
        let row = (((p.y - self.bounds_min.y) / ps).floor() as usize).min(n - 1);
        Ok(Pixel { row, col })
    }

    /// World coordinates of the center of cell `px`.
    pub fn pixel_to_world(&self, px: Pixel) -> Vec2 {
        let ps = self.pixel_size();
        Vec2::new(
            self.bounds_min.x + (px.col as f64 + 0.5) * ps,
            self.bounds_min.y + (px.row as f64 + 0.5) * ps,
        )
    }

    pub fn zeros(&self) -> GridMap {
        GridMap::new(self.resolution, self.resolution, self.pixel_size(), self.bounds_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub origin: Vec2,
    pub values: Vec<f32>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, pixel_size: f64, origin: Vec2) -> Self {
        assert!(width > 0 && height > 0 && pixel_size > 0.0);
        Self {
            width,
            height,
            pixel_size,
            origin,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.width + col] = v;
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) * self.pixel_size,
            self.origin.y + (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Integer translation by `(d_row, d_col)`; vacated cells are zero.
    pub fn shifted(&self, d_row: i64, d_col: i64) -> GridMap {
        let mut out = GridMap::new(self.width, self.height, self.pixel_size, self.origin);
        for r in 0..self.height as i64 {
            let sr = r - d_row;
            if sr < 0 || sr >= self.height as i64 {
                continue;
            }
            for c in 0..self.width as i64 {
                let sc = c - d_col;
                if sc < 0 || sc >= self.width as i64 {
                    continue;
                }
                out.values[(r as usize) * self.width + c as usize] = self.values[sr as usize * self.width + sc as usize];
            }
        }
        out
    }
}

/// Write `value` into every cell of `map` whose center lies inside `shape`,
/// keeping the maximum of existing and new values.
pub fn render_into(map: &mut GridMap, shape: &Polygon, value: f32) {
    if shape.area() <= 0.0 {
        return;
    }
    let (lo, hi) = shape.bbox();
    let ps = map.pixel_size;
    let col_lo = (((lo.x - map.origin.x) / ps - 0.5).ceil().max(0.0)) as usize;
    let row_lo = (((lo.y - map.origin.y) / ps - 0.5).ceil().max(0.0)) as usize;
    let col_hi = ((hi.x - map.origin.x) / ps - 0.5).floor();
    let row_hi = ((hi.y - map.origin.y) / ps - 0.5).floor();
    if col_hi < 0.0 || row_hi < 0.0 {
        return;
    }
    let col_hi = (col_hi as usize).min(map.width - 1);
    let row_hi = (row_hi as usize).min(map.height - 1);
    for r in row_lo..=row_hi {
        for c in col_lo..=col_hi {
            if shape.contains(map.cell_center(r, c)) {
                let v = &mut map.values[r * map.width + c];
                if value > *v {
                    *v = value;
                }
            }
        }
    }
}

/// Rasterize a polygon: cells whose centers fall inside carry `value`.
pub fn render_footprint(shape: &Polygon, geom: &MapGeometry, value: f32) -> GridMap {
    let mut m = geom.zeros();
    render_into(&mut m, shape, value);
    m
}

/// Resample `m` rotated counter-clockwise by `angle` about its center.
/// Samples falling outside the source are zero.
pub fn rotate_map(m: &GridMap, angle: f64, mode: Interp) -> Result<GridMap, GridError> {
    if m.width != m.height {
        return Err(GridError::NotSquare {
            width: m.width,
            height: m.height,
        });
    }
    let mut out = m.clone();
    rotate_values(&m.values, &mut out.values, m.width, angle, mode);
    Ok(out)
}

/// Rotation kernel over a raw square `n x n` buffer.
pub fn rotate_values(src: &[f32], dst: &mut [f32], n: usize, angle: f64, mode: Interp) {
    debug_assert_eq!(src.len(), n * n);
    debug_assert_eq!(dst.len(), n * n);
    if angle == 0.0 {
        dst.copy_from_slice(src);
        return;
    }
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = angle.sin_cos();
    let at = |r: i64, col: i64| -> f32 {
        if r < 0 || col < 0 || r >= n as i64 || col >= n as i64 {
            0.0
        } else {
            src[r as usize * n + col as usize]
        }
    };
    for r in 0..n {
        let dy = r as f64 - c;
        for col in 0..n {
            let dx = col as f64 - c;
            // inverse rotation maps the output cell back into the source
            let sx = co * dx + s * dy + c;
            let sy = -s * dx + co * dy + c;
            dst[r * n + col] = match mode {
                Interp::Nearest => at((sy + 0.5).floor() as i64, (sx + 0.5).floor() as i64),
                Interp::Bilinear => {
                    let x0 = sx.floor();
                    let y0 = sy.floor();
                    let fx = sx - x0;
                    let fy = sy - y0;
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    let v00 = at(y0, x0) as f64;
                    let v01 = at(y0, x0 + 1) as f64;
                    let v10 = at(y0 + 1, x0) as f64;
                    let v11 = at(y0 + 1, x0 + 1) as f64;
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    (top * (1.0 - fy) + bot * fy) as f32
                }
            };
        }
    }
}
