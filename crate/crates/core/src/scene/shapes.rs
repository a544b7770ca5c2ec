use crate::geometry::{Ray, Vec3};
use serde::{Deserialize, Serialize};

/// Opaque surface geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned rectangle: `min` and `max` agree on exactly one axis.
    BoxFace { min: Vec3, max: Vec3 },
}

/// Ray/surface hit: distance and geometric normal (unoriented).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
}

impl Shape {
    /// Axis of a box face's normal, if the face is well formed.
    pub fn face_axis(min: Vec3, max: Vec3) -> Option<usize> {
        let flat: Vec<usize> = (0..3).filter(|&a| min[a] == max[a]).collect();
        match flat.as_slice() {
            [a] if (0..3).all(|b| b == *a || min[b] < max[b]) => Some(*a),
            _ => None,
        }
    }

    /// Geometric normal at a point on the surface (unoriented).
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { center, .. } => (p - center).normalized(),
            Shape::BoxFace { min, max } => {
                let mut n = [0.0; 3];
                n[Self::face_axis(min, max).unwrap_or(2)] = 1.0;
                Vec3::from(n)
            }
        }
    }

    /// Nearest intersection with `t` in `(t_min, t_max)`.
    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                let b = oc.dot(ray.direction);
                let c = oc.length_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable root pair.
                let q = if b > 0.0 { -b - sq } else { -b + sq };
                let (mut t0, mut t1) = (q, if q != 0.0 { c / q } else { 0.0 });
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                let t = if t0 > t_min && t0 < t_max {
                    t0
                } else if t1 > t_min && t1 < t_max {
                    t1
                } else {
                    return None;
                };
                Some(Hit {
                    t,
                    normal: (ray.at(t) - center) / radius,
                })
            }
            Shape::BoxFace { min, max } => {
                let a = Self::face_axis(min, max)?;
                let d = ray.direction[a];
                if d == 0.0 {
                    return None;
                }
                let t = (min[a] - ray.origin[a]) / d;
                if !(t > t_min && t < t_max) {
                    return None;
                }
                let p = ray.at(t);
                let inside = (0..3).filter(|&b| b != a).all(|b| p[b] >= min[b] && p[b] <= max[b]);
                if !inside {
                    return None;
                }
                let mut n = [0.0; 3];
                n[a] = 1.0;
                Some(Hit {
                    t,
                    normal: Vec3::from(n),
                })
            }
        }
    }
}
