//! Scene description and pointwise optical quantities.

mod detector;
mod grid;
mod optics;
pub mod presets;
mod shapes;

pub use detector::{pixel_bounds, pixel_index, CameraFrame, Detector};
pub use grid::{GridGeometry, LengthUnit, VoxelGridField};
pub use optics::{Brdf, PhaseFunction, PhongBrdf};
pub use shapes::{Hit, Shape};

use crate::geometry::{Aabb, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::hash::{Hash, Hasher};

/// Extinction of one particle species.
#[derive(Debug, Clone, PartialEq)]
pub enum Extinction {
    Constant(f64),
    Grid(VoxelGridField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSpecies {
    pub extinction: Extinction,
    pub albedo: f64,
    pub phase: PhaseFunction,
}

/// Opaque two-sided surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub shape: Shape,
    pub brdf: Brdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LightSource {
    /// Parallel rays entering through the top (max z) face of the bounds.
    /// `radiance` is the irradiance normal to the beam.
    DirectionalSun { direction: Vec3, radiance: f64 },
    /// `radiance` is the radiant intensity per steradian.
    IsotropicPoint { position: Vec3, radiance: f64 },
}

impl LightSource {
    pub fn radiance(&self) -> f64 {
        match *self {
            LightSource::DirectionalSun { radiance, .. } => radiance,
            LightSource::IsotropicPoint { radiance, .. } => radiance,
        }
    }
}

/// Unvalidated scene content. The grid also defines the scene bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub unit: LengthUnit,
    pub grid: GridGeometry,
    pub species: Vec<ParticleSpecies>,
    pub surfaces: Vec<Surface>,
    pub light: LightSource,
    pub detectors: Vec<Detector>,
}

/// One violated scene invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("domain error: {0}")]
    Domain(String),
}

fn violation(out: &mut Vec<Violation>, location: impl Into<String>, message: impl Into<String>) {
    out.push(Violation {
        location: location.into(),
        message: message.into(),
    });
}

fn check_phase(out: &mut Vec<Violation>, loc: &str, p: &PhaseFunction) {
    if let PhaseFunction::HenyeyGreenstein { g } = *p {
        if !(g > -1.0 && g < 1.0) {
            violation(out, loc, format!("asymmetry g={g} outside (-1, 1)"));
        }
    }
}

fn check_brdf(out: &mut Vec<Violation>, loc: &str, b: &Brdf) {
    match *b {
        Brdf::Diffuse { albedo } => {
            if !(0.0..=1.0).contains(&albedo) {
                violation(out, loc, format!("diffuse albedo {albedo} outside [0, 1]"));
            }
        }
        Brdf::Phong { kappa_s, gamma } => {
            if !(0.0..=1.0).contains(&kappa_s) {
                violation(out, loc, format!("kappa_s {kappa_s} outside [0, 1]"));
            }
            if !(gamma >= 0.0 && gamma.is_finite()) {
                violation(out, loc, format!("gamma {gamma} must be finite and >= 0"));
            }
        }
    }
}

/// Every violated invariant of `spec`; empty iff the scene is well formed.
pub fn validate_scene(spec: &SceneSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let g = &spec.grid;
    if g.dims.contains(&0) {
        violation(&mut out, "grid", format!("dims {:?} must all be >= 1", g.dims));
    }
    if (0..3).any(|a| !(g.voxel_size[a] > 0.0 && g.voxel_size[a].is_finite())) || !g.origin.is_finite() {
        violation(&mut out, "grid", "voxel_size must be finite and > 0, origin finite");
    }
    for (j, s) in spec.species.iter().enumerate() {
        let loc = format!("species[{j}]");
        if !(0.0..=1.0).contains(&s.albedo) {
            violation(&mut out, &loc, format!("albedo {} outside [0, 1]", s.albedo));
        }
        check_phase(&mut out, &loc, &s.phase);
        match &s.extinction {
            Extinction::Constant(b) => {
                if !(*b >= 0.0 && b.is_finite()) {
                    violation(&mut out, &loc, format!("extinction {b} must be finite and >= 0"));
                }
            }
            Extinction::Grid(f) => {
                if f.geometry != *g {
                    violation(&mut out, &loc, "extinction grid geometry differs from the scene grid");
                }
                if f.unit != spec.unit {
                    violation(&mut out, &loc, "extinction grid unit differs from the scene unit");
                }
                if f.values.len() != f.geometry.voxel_count() {
                    violation(
                        &mut out,
                        &loc,
                        format!("{} values for {} voxels", f.values.len(), f.geometry.voxel_count()),
                    );
                } else {
                    for (i, &b) in f.values.iter().enumerate() {
                        if !(b >= 0.0 && b.is_finite()) {
                            let c = f.geometry.coords(i);
                            violation(
                                &mut out,
                                format!("{loc} voxel ({}, {}, {})", c[0], c[1], c[2]),
                                format!("extinction {b} must be finite and >= 0"),
                            );
                        }
                    }
                }
            }
        }
    }
    let bounds = g.bounds();
    for (k, s) in spec.surfaces.iter().enumerate() {
        let loc = format!("surfaces[{k}]");
        check_brdf(&mut out, &loc, &s.brdf);
        match s.shape {
            Shape::Sphere { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) || !center.is_finite() {
                    violation(&mut out, &loc, "sphere needs a finite centre and radius > 0");
                }
            }
            Shape::BoxFace { min, max } => {
                if Shape::face_axis(min, max).is_none() {
                    violation(&mut out, &loc, "box face must be flat along exactly one axis");
                }
            }
        }
    }
    match spec.light {
        LightSource::DirectionalSun { direction, radiance } => {
            if !(radiance > 0.0 && radiance.is_finite()) {
                violation(&mut out, "light", format!("radiance {radiance} must be > 0"));
            }
            if !direction.is_finite() || (direction.length() - 1.0).abs() > 1e-9 {
                violation(&mut out, "light", "sun direction must be unit length");
            } else if direction.z >= 0.0 {
                violation(&mut out, "light", "sun direction must point down through the top face");
            }
        }
        LightSource::IsotropicPoint { position, radiance } => {
            if !(radiance > 0.0 && radiance.is_finite()) {
                violation(&mut out, "light", format!("radiance {radiance} must be > 0"));
            }
            if !position.is_finite() || !bounds.contains(position, 0.0) {
                violation(&mut out, "light", "point light must lie inside the scene bounds");
            }
        }
    }
    if spec.detectors.is_empty() {
        violation(&mut out, "detectors", "at least one detector is required");
    }
    for (d, det) in spec.detectors.iter().enumerate() {
        let loc = format!("detectors[{d}]");
        if !(det.fov > 0.0 && det.fov < std::f64::consts::PI) {
            violation(&mut out, &loc, format!("fov {} outside (0, pi)", det.fov));
        }
        if det.rows == 0 || det.cols == 0 {
            violation(&mut out, &loc, "rows and cols must be >= 1");
        }
        let dl = det.direction.length();
        if !(dl > 0.0 && dl.is_finite()) || !det.position.is_finite() {
            violation(&mut out, &loc, "direction must be non-zero and position finite");
        } else if det.direction.cross(det.up).length() <= 1e-12 * dl * det.up.length() {
            violation(&mut out, &loc, "up vector must not be parallel to the view direction");
        }
    }
    out
}

/// Validated scene with per-voxel optical tables.
#[derive(Debug, Clone)]
pub struct Scene {
    spec: SceneSpec,
    albedo: Vec<f64>,
    phase: Vec<PhaseFunction>,
    /// Species-major extinction table, `beta[j * n + v]`.
    beta: Vec<f64>,
    beta_total: Vec<f64>,
    beta_scat: Vec<f64>,
    fingerprint: u64,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Scene, SceneError> {
        let v = validate_scene(&spec);
        if !v.is_empty() {
            return Err(SceneError::Invalid(v));
        }
        let n = spec.grid.voxel_count();
        let mut beta = Vec::with_capacity(n * spec.species.len());
        for s in &spec.species {
            match &s.extinction {
                Extinction::Constant(b) => beta.extend(std::iter::repeat_n(*b, n)),
                Extinction::Grid(f) => beta.extend_from_slice(&f.values),
            }
        }
        let mut beta_total = vec![0.0; n];
        let mut beta_scat = vec![0.0; n];
        for (j, s) in spec.species.iter().enumerate() {
            for v in 0..n {
                let b = beta[j * n + v];
                beta_total[v] += b;
                beta_scat[v] += s.albedo * b;
            }
        }
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for b in &beta {
            b.to_bits().hash(&mut h);
        }
        for s in &spec.species {
            s.albedo.to_bits().hash(&mut h);
        }
        for s in &spec.surfaces {
            if let Brdf::Phong { kappa_s, gamma } = s.brdf {
                kappa_s.to_bits().hash(&mut h);
                gamma.to_bits().hash(&mut h);
            } else if let Brdf::Diffuse { albedo } = s.brdf {
                albedo.to_bits().hash(&mut h);
            }
        }
        Ok(Scene {
            albedo: spec.species.iter().map(|s| s.albedo).collect(),
            phase: spec.species.iter().map(|s| s.phase).collect(),
            spec,
            beta,
            beta_total,
            beta_scat,
            fingerprint: h.finish(),
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn into_spec(self) -> SceneSpec {
        self.spec
    }

    pub fn grid(&self) -> &GridGeometry {
        &self.spec.grid
    }

    pub fn bounds(&self) -> Aabb {
        self.spec.grid.bounds()
    }

    pub fn species(&self) -> &[ParticleSpecies] {
        &self.spec.species
    }

    pub fn surfaces(&self) -> &[Surface] {
        &self.spec.surfaces
    }

    pub fn light(&self) -> &LightSource {
        &self.spec.light
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.spec.detectors
    }

    pub fn voxel_count(&self) -> usize {
        self.beta_total.len()
    }

    /// True when no species is present, so transport never needs voxel data.
    pub fn is_vacuum(&self) -> bool {
        self.spec.species.is_empty()
    }

    /// Identifies the optical parameters (extinctions, albedos, BRDFs).
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    #[inline]
    pub fn beta_species(&self, j: usize, v: usize) -> f64 {
        self.beta[j * self.beta_total.len() + v]
    }

    /// Extinction values of species `j` for every voxel.
    pub fn species_values(&self, j: usize) -> &[f64] {
        let n = self.beta_total.len();
        &self.beta[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn beta_total(&self, v: usize) -> f64 {
        self.beta_total[v]
    }

    pub fn beta_total_table(&self) -> &[f64] {
        &self.beta_total
    }

    #[inline]
    pub fn beta_scat(&self, v: usize) -> f64 {
        self.beta_scat[v]
    }

    pub fn species_albedo(&self, j: usize) -> f64 {
        self.albedo[j]
    }

    pub fn species_phase(&self, j: usize) -> &PhaseFunction {
        &self.phase[j]
    }

    fn voxel_at(&self, x: Vec3) -> Result<usize, SceneError> {
        self.spec
            .grid
            .voxel_of(x)
            .map(|c| self.spec.grid.index(c))
            .ok_or_else(|| SceneError::Domain(format!("point {:?} outside the scene bounds", x.to_array())))
    }

    /// Total and per-species extinction at `x`.
    pub fn extinction_at(&self, x: Vec3) -> Result<(f64, Vec<f64>), SceneError> {
        let v = self.voxel_at(x)?;
        let per: Vec<f64> = (0..self.spec.species.len()).map(|j| self.beta_species(j, v)).collect();
        Ok((self.beta_total[v], per))
    }

    /// Extinction-weighted mean albedo; 0 in empty voxels.
    pub fn effective_albedo(&self, x: Vec3) -> Result<f64, SceneError> {
        let v = self.voxel_at(x)?;
        Ok(self.effective_albedo_voxel(v))
    }

    #[inline]
    pub fn effective_albedo_voxel(&self, v: usize) -> f64 {
        let b = self.beta_total[v];
        if b > 0.0 {
            self.beta_scat[v] / b
        } else {
            0.0
        }
    }

    /// Scattering-coefficient-weighted phase function at `x`.
    pub fn mixture_phase_eval(&self, x: Vec3, cos_theta: f64) -> Result<f64, SceneError> {
        let v = self.voxel_at(x)?;
        if !(self.beta_scat[v] > 0.0) {
            return Err(SceneError::Domain(format!(
                "zero scattering coefficient at {:?}",
                x.to_array()
            )));
        }
        Ok(self.scattering_density(v, cos_theta) / self.beta_scat[v])
    }

    /// `sum_j albedo_j * beta_j(v) * f_j(cos)`, the scattering coefficient
    /// times the mixture phase function.
    #[inline]
    pub fn scattering_density(&self, v: usize, cos_theta: f64) -> f64 {
        let n = self.beta_total.len();
        let mut s = 0.0;
        for j in 0..self.albedo.len() {
            let b = self.beta[j * n + v];
            if b > 0.0 {
                s += self.albedo[j] * b * self.phase[j].eval(cos_theta);
            }
        }
        s
    }

    /// Density of a scatter vertex in voxel `v` followed by a direction change
    /// with cosine `cos`: extinction times the mixture phase function. Falls
    /// back to the extinction-weighted mixture where nothing scatters.
    #[inline]
    pub fn vertex_density(&self, v: usize, cos_theta: f64) -> f64 {
        let bs = self.beta_scat[v];
        if bs > 0.0 {
            self.beta_total[v] * self.scattering_density(v, cos_theta) / bs
        } else {
            let n = self.beta_total.len();
            (0..self.albedo.len())
                .map(|j| self.beta[j * n + v] * self.phase[j].eval(cos_theta))
                .sum()
        }
    }

    /// Draws a species with probability proportional to its extinction.
    pub fn sample_species(&self, v: usize, u: f64) -> usize {
        let n = self.beta_total.len();
        let target = u * self.beta_total[v];
        let mut acc = 0.0;
        let last = self.albedo.len() - 1;
        for j in 0..last {
            acc += self.beta[j * n + v];
            if target < acc {
                return j;
            }
        }
        last
    }

    /// Copy with species `j` replaced by the gridded extinction `values`.
    pub fn with_species_extinction(&self, j: usize, values: &[f64]) -> Result<Scene, SceneError> {
        let mut spec = self.spec.clone();
        let s = spec
            .species
            .get_mut(j)
            .ok_or_else(|| SceneError::Domain(format!("no species {j}")))?;
        s.extinction = Extinction::Grid(VoxelGridField::new(spec.grid, spec.unit, values.to_vec()));
        Scene::new(spec)
    }

    /// Copy with surface `k` using `brdf`.
    pub fn with_surface_brdf(&self, k: usize, brdf: Brdf) -> Result<Scene, SceneError> {
        let mut spec = self.spec.clone();
        let s = spec
            .surfaces
            .get_mut(k)
            .ok_or_else(|| SceneError::Domain(format!("no surface {k}")))?;
        s.brdf = brdf;
        Scene::new(spec)
    }

    /// Copy with every detector resampled to `rows x cols`.
    pub fn with_detector_resolution(&self, rows: usize, cols: usize) -> Scene {
        let mut s = self.clone();
        for d in &mut s.spec.detectors {
            *d = d.with_resolution(rows, cols);
        }
        s
    }
}

/// Samples `(cos_theta, phi)` from `phase`.
pub fn phase_sample<R: Rng + ?Sized>(phase: &PhaseFunction, rng: &mut R) -> (f64, f64) {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    phase.sample(u1, u2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit_grid(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::covering(&Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0)), dims)
    }

    fn det() -> Detector {
        Detector::looking_at(
            Vec3::new(0.5, 0.5, 3.0),
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(0.0, 1.0, 0.0),
            4,
            4,
            0.5,
        )
    }

    pub(crate) fn cloud_air(beta_c: f64, beta_a: f64) -> SceneSpec {
        SceneSpec {
            unit: LengthUnit::Km,
            grid: unit_grid([2, 2, 2]),
            species: vec![
                ParticleSpecies {
                    extinction: Extinction::Constant(beta_c),
                    albedo: 0.99,
                    phase: PhaseFunction::HenyeyGreenstein { g: 0.85 },
                },
                ParticleSpecies {
                    extinction: Extinction::Constant(beta_a),
                    albedo: 0.912,
                    phase: PhaseFunction::Rayleigh,
                },
            ],
            surfaces: vec![],
            light: LightSource::DirectionalSun {
                direction: Vec3::new(0.0, 0.0, -1.0),
                radiance: 1.0,
            },
            detectors: vec![det()],
        }
    }

    #[test]
    fn extinction_sums_species() {
        let s = Scene::new(cloud_air(127.0, 0.04)).unwrap();
        let (t, per) = s.extinction_at(Vec3::new(0.3, 0.3, 0.3)).unwrap();
        assert!((t - 127.04).abs() < 1e-12);
        assert_eq!(per, vec![127.0, 0.04]);
        assert!(s.extinction_at(Vec3::new(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn effective_albedo_mixture() {
        let s = Scene::new(cloud_air(127.0, 0.04)).unwrap();
        let w = s.effective_albedo(Vec3::new(0.5, 0.5, 0.5)).unwrap();
        let expected = (0.99 * 127.0 + 0.912 * 0.04) / 127.04;
        assert!((w - expected).abs() < 1e-15);
        assert!((w - 0.989975).abs() < 1e-6);
        let empty = Scene::new(cloud_air(0.0, 0.0)).unwrap();
        assert_eq!(empty.effective_albedo(Vec3::new(0.5, 0.5, 0.5)).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_mixture_albedo() {
        let mut spec = cloud_air(2.0, 2.0);
        spec.species[0].albedo = 1.0;
        spec.species[1].albedo = 0.0;
        let s = Scene::new(spec).unwrap();
        assert_eq!(s.effective_albedo(Vec3::new(0.5, 0.5, 0.5)).unwrap(), 0.5);
    }

    #[test]
    fn mixture_phase_weights() {
        let mut spec = cloud_air(3.0, 3.0);
        spec.species[0].albedo = 0.5;
        spec.species[1].albedo = 0.5;
        let s = Scene::new(spec).unwrap();
        let x = Vec3::new(0.5, 0.5, 0.5);
        for c in [-1.0, -0.2, 0.4, 1.0] {
            let a = PhaseFunction::HenyeyGreenstein { g: 0.85 }.eval(c);
            let b = PhaseFunction::Rayleigh.eval(c);
            assert!((s.mixture_phase_eval(x, c).unwrap() - 0.5 * (a + b)).abs() < 1e-14);
        }
        let dense = Scene::new(cloud_air(127.0, 0.04)).unwrap();
        let hg = PhaseFunction::HenyeyGreenstein { g: 0.85 };
        // holds where the forward-peaked cloud lobe dominates Rayleigh
        for c in [0.5, 0.9, 1.0] {
            let m = dense.mixture_phase_eval(x, c).unwrap();
            assert!((m - hg.eval(c)).abs() <= 1e-3 * hg.eval(c));
        }
        let empty = Scene::new(cloud_air(0.0, 0.0)).unwrap();
        assert!(empty.mixture_phase_eval(x, 0.0).is_err());
    }

    #[test]
    fn identical_species_phase_is_exact() {
        let mut spec = cloud_air(1.7, 0.3);
        spec.species[1].phase = spec.species[0].phase;
        let s = Scene::new(spec).unwrap();
        let x = Vec3::new(0.1, 0.9, 0.5);
        for c in [-1.0, 0.0, 0.5, 1.0] {
            let m = s.mixture_phase_eval(x, c).unwrap();
            let p = s.species_phase(0).eval(c);
            assert!((m - p).abs() <= 4.0 * f64::EPSILON * p);
        }
    }

    #[test]
    fn validation_flags_bad_voxel_and_grid_mismatch() {
        assert!(validate_scene(&cloud_air(1.0, 0.1)).is_empty());
        let mut spec = cloud_air(1.0, 0.1);
        let mut vals = vec![1.0; 8];
        vals[0] = -1.0;
        spec.species[0].extinction =
            Extinction::Grid(VoxelGridField::new(spec.grid, LengthUnit::Km, vals));
        let v = validate_scene(&spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].location.contains("(0, 0, 0)"), "{:?}", v);

        let mut spec = cloud_air(1.0, 0.1);
        spec.species[1].extinction =
            Extinction::Grid(VoxelGridField::filled(unit_grid([3, 2, 2]), LengthUnit::Km, 0.1));
        assert_eq!(validate_scene(&spec).len(), 1);
        assert!(Scene::new(spec).is_err());
    }

    #[test]
    fn species_sampling_follows_extinction() {
        let s = Scene::new(cloud_air(3.0, 1.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| s.sample_species(0, rng.gen()) == 0).count();
        let p = hits as f64 / n as f64;
        let sigma = (0.75 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * sigma, "{p}");
        let single = Scene::new(cloud_air(3.0, 0.0)).unwrap();
        assert!((0..1000).all(|_| single.sample_species(0, rng.gen()) == 0));
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = Scene::new(cloud_air(1.0, 0.1)).unwrap();
        let b = a.with_species_extinction(0, &[1.0; 8]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut vals = [1.0; 8];
        vals[3] = 1.01;
        let c = a.with_species_extinction(0, &vals).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
