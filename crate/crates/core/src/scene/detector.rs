use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

/// Pinhole camera. Each pixel integrates incoming radiance over its solid
/// angle (box footprint), so pixel values carry units of radiance times sr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub position: Vec3,
    /// View direction.
    pub direction: Vec3,
    pub up: Vec3,
    pub rows: usize,
    pub cols: usize,
    /// Full horizontal field of view in radians.
    pub fov: f64,
}

/// Orthonormal camera frame and image-plane half extents.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub tan_x: f64,
    pub tan_y: f64,
}

impl Detector {
    /// Camera at `position` aimed at `target`.
    pub fn looking_at(position: Vec3, target: Vec3, up: Vec3, rows: usize, cols: usize, fov: f64) -> Self {
        Detector {
            position,
            direction: (target - position).normalized(),
            up,
            rows,
            cols,
            fov,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn with_resolution(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = self.direction.normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        let tan_x = (0.5 * self.fov).tan();
        let tan_y = tan_x * self.rows as f64 / self.cols as f64;
        CameraFrame {
            forward,
            right,
            up,
            tan_x,
            tan_y,
        }
    }
}

impl CameraFrame {
    /// Normalized image coordinates `(u, v)` in `[-1, 1]^2` of world point `p`
    /// seen from `origin`, or `None` outside the field of view.
    #[inline]
    pub fn project(&self, origin: Vec3, p: Vec3) -> Option<(f64, f64)> {
        let w = p - origin;
        let z = w.dot(self.forward);
        if z <= 0.0 {
            return None;
        }
        let u = w.dot(self.right) / (z * self.tan_x);
        let v = w.dot(self.up) / (z * self.tan_y);
        if u.abs() <= 1.0 && v.abs() <= 1.0 {
            Some((u, v))
        } else {
            None
        }
    }

    /// World direction (not normalized) through image point `(u, v)`.
    #[inline]
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        self.forward + self.right * (u * self.tan_x) + self.up * (v * self.tan_y)
    }

    /// Solid angle per unit `du dv` at image point `(u, v)`.
    #[inline]
    pub fn solid_angle_density(&self, u: f64, v: f64) -> f64 {
        let d2 = 1.0 + (u * self.tan_x).powi(2) + (v * self.tan_y).powi(2);
        self.tan_x * self.tan_y / (d2 * d2.sqrt())
    }
}

/// Row-major pixel index of image point `(u, v)`; row 0 is the top row.
#[inline]
pub fn pixel_index(u: f64, v: f64, rows: usize, cols: usize) -> usize {
    let col = (((u + 1.0) * 0.5 * cols as f64) as usize).min(cols - 1);
    let row = (((1.0 - v) * 0.5 * rows as f64) as usize).min(rows - 1);
    row * cols + col
}

/// Image-plane rectangle `(u0, u1, v0, v1)` covered by a pixel.
pub fn pixel_bounds(pixel: usize, rows: usize, cols: usize) -> (f64, f64, f64, f64) {
    let row = pixel / cols;
    let col = pixel % cols;
    let u0 = -1.0 + 2.0 * col as f64 / cols as f64;
    let u1 = -1.0 + 2.0 * (col + 1) as f64 / cols as f64;
    let v1 = 1.0 - 2.0 * row as f64 / rows as f64;
    let v0 = 1.0 - 2.0 * (row + 1) as f64 / rows as f64;
    (u0, u1, v0, v1)
}
