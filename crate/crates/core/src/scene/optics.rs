//! Phase functions and surface reflectance models.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const INV_4PI: f64 = 1.0 / (4.0 * PI);

/// Angular scattering density, a function of the cosine between the incoming
/// and outgoing propagation directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PhaseFunction {
    HenyeyGreenstein { g: f64 },
    Rayleigh,
}

impl PhaseFunction {
    pub fn isotropic() -> Self {
        PhaseFunction::HenyeyGreenstein { g: 0.0 }
    }

    /// Density per steradian at `cos_theta`.
    #[inline]
    pub fn eval(&self, cos_theta: f64) -> f64 {
        match *self {
            PhaseFunction::HenyeyGreenstein { g } => {
                let denom = 1.0 + g * g - 2.0 * g * cos_theta;
                INV_4PI * (1.0 - g * g) / (denom * denom.sqrt())
            }
            PhaseFunction::Rayleigh => 3.0 * (1.0 + cos_theta * cos_theta) / (16.0 * PI),
        }
    }

    /// Inverse-CDF sample of the scattering cosine from `u` in `[0, 1)`.
    pub fn sample_cos(&self, u: f64) -> f64 {
        match *self {
            PhaseFunction::HenyeyGreenstein { g } => {
                if g.abs() < 1e-6 {
                    2.0 * u - 1.0
                } else {
                    let s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u);
                    ((1.0 + g * g - s * s) / (2.0 * g)).clamp(-1.0, 1.0)
                }
            }
            PhaseFunction::Rayleigh => {
                // CDF (mu^3 + 3 mu + 4) / 8 = u: depressed cubic with one real root.
                let q = 8.0 * u - 4.0;
                let a = (0.5 * q + (0.25 * q * q + 1.0).sqrt()).cbrt();
                (a - 1.0 / a).clamp(-1.0, 1.0)
            }
        }
    }

    /// Samples `(cos_theta, phi)` from two uniform variates.
    pub fn sample(&self, u1: f64, u2: f64) -> (f64, f64) {
        (self.sample_cos(u1), 2.0 * PI * u2)
    }
}

/// Phong reflectance `1 - kappa_s + kappa_s * dot^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhongBrdf {
    pub kappa_s: f64,
    pub gamma: f64,
}

impl PhongBrdf {
    pub fn new(kappa_s: f64, gamma: f64) -> Self {
        PhongBrdf { kappa_s, gamma }
    }

    /// `dot` is clamped to `[0, 1]` before exponentiation.
    #[inline]
    pub fn eval_dot(&self, dot: f64) -> f64 {
        let c = dot.clamp(0.0, 1.0);
        1.0 - self.kappa_s + self.kappa_s * c.powf(self.gamma)
    }

    pub fn eval(&self, w: crate::geometry::Vec3, w_prime: crate::geometry::Vec3) -> f64 {
        self.eval_dot(w.dot(w_prime))
    }

    /// Partial derivatives `(d f / d kappa_s, d f / d gamma)` at `dot`.
    pub fn gradient_dot(&self, dot: f64) -> (f64, f64) {
        let c = dot.clamp(0.0, 1.0);
        let p = c.powf(self.gamma);
        let dk = p - 1.0;
        let dg = if c > 0.0 { self.kappa_s * p * c.ln() } else { 0.0 };
        (dk, dg)
    }
}

/// Surface reflectance model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Brdf {
    /// Lambertian, `albedo / pi`.
    Diffuse { albedo: f64 },
    Phong { kappa_s: f64, gamma: f64 },
}

impl Brdf {
    /// Value for the Phong lobe argument `dot` (ignored by the diffuse model).
    #[inline]
    pub fn eval_dot(&self, dot: f64) -> f64 {
        match *self {
            Brdf::Diffuse { albedo } => albedo / PI,
            Brdf::Phong { kappa_s, gamma } => PhongBrdf::new(kappa_s, gamma).eval_dot(dot),
        }
    }

    pub fn phong(&self) -> Option<PhongBrdf> {
        match *self {
            Brdf::Phong { kappa_s, gamma } => Some(PhongBrdf::new(kappa_s, gamma)),
            Brdf::Diffuse { .. } => None,
        }
    }
}
