//! Forward path sampling from the light source.

use super::dda::{traverse, walk};
use super::record::{Entry, EventKind, LeEvent, PathRecord, Span, Vertex, NONE};
use crate::geometry::{Aabb, Ray, Vec3};
use crate::scene::{pixel_index, CameraFrame, Hit, LightSource, Scene};
use rand::Rng;
use std::f64::consts::PI;

/// Default cap on scatter/reflect events per path.
pub const DEFAULT_MAX_BOUNCES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Scatter and reflect events allowed per path; the next event is
    /// recorded as a truncated escape. `1` gives single scattering.
    pub max_bounces: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            max_bounces: DEFAULT_MAX_BOUNCES,
        }
    }
}

/// Outcome of free-flight sampling along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceSample {
    Scatter { t: f64, point: Vec3, voxel: usize },
    Escaped { t: f64 },
    HitSurface { t: f64, point: Vec3, surface: usize, normal: Vec3 },
}

/// Per-scene tracing state shared by all paths of a render.
pub struct Tracer<'a> {
    scene: &'a Scene,
    frames: Vec<CameraFrame>,
    bounds: Aabb,
    eps: f64,
    options: TraceOptions,
}

impl<'a> Tracer<'a> {
    pub fn new(scene: &'a Scene, options: TraceOptions) -> Self {
        let bounds = scene.bounds();
        let e = bounds.extent();
        let scale = e.x.max(e.y).max(e.z);
        Tracer {
            scene,
            frames: scene.detectors().iter().map(|d| d.frame()).collect(),
            bounds,
            eps: 1e-9 * scale,
            options,
        }
    }

    pub fn scene(&self) -> &Scene {
        self.scene
    }

    fn exit_distance(&self, origin: Vec3, dir: Vec3) -> f64 {
        let r = Ray {
            origin,
            direction: dir,
        };
        self.bounds.intersect(&r).map_or(0.0, |(_, b)| b.max(0.0))
    }

    pub fn nearest_surface(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<(usize, Hit)> {
        let r = Ray {
            origin,
            direction: dir,
        };
        let mut best: Option<(usize, Hit)> = None;
        let mut t_best = t_max;
        for (k, s) in self.scene.surfaces().iter().enumerate() {
            if let Some(h) = s.shape.intersect(&r, t_min, t_best) {
                t_best = h.t;
                best = Some((k, h));
            }
        }
        best
    }

    /// Moves along `dir` until the optical depth reaches `tau`, a surface is
    /// hit, or the ray leaves the bounds. Crossed voxels are appended to
    /// `entries` when given.
    pub fn advance(&self, origin: Vec3, dir: Vec3, tau: f64, mut entries: Option<&mut Vec<Entry>>) -> DistanceSample {
        let t_exit = self.exit_distance(origin, dir);
        let hit = if self.scene.surfaces().is_empty() {
            None
        } else {
            self.nearest_surface(origin, dir, self.eps, t_exit + self.eps)
        };
        let t_lim = hit.map_or(t_exit, |(_, h)| h.t);
        let mut scatter = None;
        if !self.scene.is_vacuum() {
            let beta = self.scene.beta_total_table();
            let mut acc = 0.0;
            walk(self.scene.grid(), origin, dir, t_lim, |v, a, b| {
                let bt = beta[v];
                let d = bt * (b - a);
                if bt > 0.0 && acc + d >= tau {
                    let t = (a + (tau - acc) / bt).min(b);
                    if let Some(e) = entries.as_deref_mut() {
                        if t > a {
                            e.push(Entry {
                                voxel: v as u32,
                                length: (t - a) as f32,
                            });
                        }
                    }
                    scatter = Some((t, v));
                    false
                } else {
                    acc += d;
                    if let Some(e) = entries.as_deref_mut() {
                        e.push(Entry {
                            voxel: v as u32,
                            length: (b - a) as f32,
                        });
                    }
                    true
                }
            });
        }
        if let Some((t, voxel)) = scatter {
            return DistanceSample::Scatter {
                t,
                point: origin + dir * t,
                voxel,
            };
        }
        match hit {
            Some((surface, h)) => DistanceSample::HitSurface {
                t: h.t,
                point: origin + dir * h.t,
                surface,
                normal: h.normal,
            },
            None => DistanceSample::Escaped { t: t_exit },
        }
    }

    /// Free-flight sample with `tau ~ Exp(1)`.
    pub fn sample_distance<R: Rng + ?Sized>(&self, ray: &Ray, rng: &mut R) -> DistanceSample {
        let u: f64 = rng.gen();
        self.advance(ray.origin, ray.direction, -(-u).ln_1p(), None)
    }

    /// New direction at a scatter vertex in voxel `v`: species by extinction,
    /// then that species' phase function. Returns `(direction, species, cos)`.
    pub fn sample_direction<R: Rng + ?Sized>(&self, v: usize, w_prev: Vec3, rng: &mut R) -> (Vec3, usize, f64) {
        let j = self.scene.sample_species(v, rng.gen());
        let (cos, phi) = self.scene.species_phase(j).sample(rng.gen(), rng.gen());
        (w_prev.rotate_about(cos, phi), j, cos)
    }

    fn emit<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match *self.scene.light() {
            LightSource::DirectionalSun { direction, .. } => {
                let e = self.bounds.extent();
                let x = Vec3::new(
                    self.bounds.min.x + rng.gen::<f64>() * e.x,
                    self.bounds.min.y + rng.gen::<f64>() * e.y,
                    self.bounds.max.z,
                );
                (x, direction)
            }
            LightSource::IsotropicPoint { position, .. } => (position, uniform_sphere(rng.gen(), rng.gen())),
        }
    }

    /// Traces one path; `path_index` is recorded for bookkeeping only.
    pub fn trace<R: Rng + ?Sized>(&self, rng: &mut R, path_index: u64) -> PathRecord {
        let (x0, w0) = self.emit(rng);
        let mut rec = PathRecord {
            path_index,
            initial_direction: w0,
            ..Default::default()
        };
        rec.vertices.push(Vertex {
            position: x0,
            cos: 0.0,
            voxel: NONE,
            surface: NONE,
            kind: EventKind::Emission,
            species: 0,
        });
        let mut x = x0;
        let mut w = w0;
        let mut bounces = 0;
        loop {
            let u: f64 = rng.gen();
            let tau = -(-u).ln_1p();
            let start = rec.entries.len() as u32;
            let ds = self.advance(x, w, tau, Some(&mut rec.entries));
            rec.segments.push(Span {
                start,
                end: rec.entries.len() as u32,
            });
            let (point, mut vertex) = match ds {
                DistanceSample::Escaped { t } => {
                    rec.vertices.push(escape_vertex(x + w * t));
                    return rec;
                }
                DistanceSample::Scatter { point, voxel, .. } => (
                    point,
                    Vertex {
                        position: point,
                        cos: 0.0,
                        voxel: voxel as u32,
                        surface: NONE,
                        kind: EventKind::Scatter,
                        species: 0,
                    },
                ),
                DistanceSample::HitSurface { point, surface, .. } => (
                    point,
                    Vertex {
                        position: point,
                        cos: 0.0,
                        voxel: NONE,
                        surface: surface as u32,
                        kind: EventKind::Reflect,
                        species: 0,
                    },
                ),
            };
            if bounces >= self.options.max_bounces {
                rec.vertices.push(escape_vertex(point));
                rec.truncated = true;
                return rec;
            }
            bounces += 1;
            let vi = rec.vertices.len() as u32;
            let w_new = match vertex.kind {
                EventKind::Scatter => {
                    self.local_events(&mut rec, vi, point, w, None);
                    let (w_new, j, cos) = self.sample_direction(vertex.voxel as usize, w, rng);
                    vertex.species = j as u8;
                    vertex.cos = cos;
                    w_new
                }
                _ => {
                    let n = self.scene.surfaces()[vertex.surface as usize].shape.normal_at(point);
                    let ns = if n.dot(w) < 0.0 { n } else { -n };
                    let mirror = w.reflect(n);
                    self.local_events(&mut rec, vi, point, w, Some((ns, mirror)));
                    let u1: f64 = rng.gen();
                    let u2: f64 = rng.gen();
                    let w_new = ns.rotate_about((1.0 - u1).sqrt(), 2.0 * PI * u2);
                    vertex.cos = w_new.dot(mirror);
                    w_new
                }
            };
            rec.vertices.push(vertex);
            x = point;
            w = w_new;
        }
    }

    /// Appends local-estimation events of vertex `vi` at `x` towards every
    /// detector that sees it. `surface` holds the oriented normal and mirror
    /// direction for reflect vertices.
    fn local_events(&self, rec: &mut PathRecord, vi: u32, x: Vec3, w_in: Vec3, surface: Option<(Vec3, Vec3)>) {
        for (d, det) in self.scene.detectors().iter().enumerate() {
            let Some((u, v)) = self.frames[d].project(det.position, x) else {
                continue;
            };
            let to = det.position - x;
            let r2 = to.length_squared();
            let r = r2.sqrt();
            let w_le = to / r;
            let (cos, geom) = match surface {
                None => (w_in.dot(w_le), 1.0 / r2),
                Some((ns, mirror)) => {
                    let c = ns.dot(w_le);
                    if c <= 0.0 {
                        continue;
                    }
                    (w_le.dot(mirror), c / r2)
                }
            };
            if !self.scene.surfaces().is_empty() && self.nearest_surface(x, w_le, self.eps, r).is_some() {
                continue;
            }
            let start = rec.entries.len() as u32;
            let mut tau = 0.0;
            if !self.scene.is_vacuum() {
                let entries = &mut rec.entries;
                let beta = self.scene.beta_total_table();
                walk(self.scene.grid(), x, w_le, r, |voxel, a, b| {
                    tau += beta[voxel] * (b - a);
                    entries.push(Entry {
                        voxel: voxel as u32,
                        length: (b - a) as f32,
                    });
                    true
                });
            }
            rec.le.push(LeEvent {
                vertex: vi,
                detector: d as u32,
                u: u as f32,
                v: v as f32,
                cos,
                geom,
                tau,
                span: Span {
                    start,
                    end: rec.entries.len() as u32,
                },
            });
        }
    }

    /// Whether `x` sees detector `d` without a surface in between, with
    /// the image-plane coordinates of `x`.
    pub fn detector_visibility(&self, x: Vec3, d: usize) -> Option<(f64, f64)> {
        let det = &self.scene.detectors()[d];
        let uv = self.frames[d].project(det.position, x)?;
        let to = det.position - x;
        let r = to.length();
        if self.nearest_surface(x, to / r, self.eps, r).is_some() {
            return None;
        }
        Some(uv)
    }
}

fn escape_vertex(p: Vec3) -> Vertex {
    Vertex {
        position: p,
        cos: 0.0,
        voxel: NONE,
        surface: NONE,
        kind: EventKind::Escape,
        species: 0,
    }
}

/// Uniform direction on the unit sphere.
pub fn uniform_sphere(u1: f64, u2: f64) -> Vec3 {
    let z = 1.0 - 2.0 * u1;
    let s = (1.0 - z * z).max(0.0).sqrt();
    let (sp, cp) = (2.0 * PI * u2).sin_cos();
    Vec3::new(s * cp, s * sp, z)
}

/// Samples one path from the light source.
pub fn trace_path<R: Rng + ?Sized>(scene: &Scene, rng: &mut R, path_index: u64, options: TraceOptions) -> PathRecord {
    Tracer::new(scene, options).trace(rng, path_index)
}

/// Optical depth of the straight segment `x -> y` (inside-bounds portion).
pub fn optical_depth(scene: &Scene, x: Vec3, y: Vec3) -> f64 {
    if scene.is_vacuum() {
        return 0.0;
    }
    let d = y - x;
    let len = d.length();
    if len == 0.0 {
        return 0.0;
    }
    let s = traverse(scene.grid(), &Ray::new(x, d), len);
    s.entries.iter().map(|&(v, l)| scene.beta_total(v) * l).sum()
}

/// Transmittance between `x` and `y`.
pub fn transmittance(scene: &Scene, x: Vec3, y: Vec3) -> f64 {
    (-optical_depth(scene, x, y)).exp()
}

/// Local-estimation density of a volume point `x` reached along `w_prev`
/// towards `pixel` of detector `detector`: mixture phase function times
/// transmittance times `1 / r^2`, or 0 when `x` projects elsewhere or is
/// hidden by a surface.
pub fn local_estimate(scene: &Scene, x: Vec3, w_prev: Vec3, detector: usize, pixel: usize) -> f64 {
    let tracer = Tracer::new(scene, TraceOptions::default());
    let det = &scene.detectors()[detector];
    let Some((u, v)) = tracer.detector_visibility(x, detector) else {
        return 0.0;
    };
    if pixel_index(u, v, det.rows, det.cols) != pixel {
        return 0.0;
    }
    let to = det.position - x;
    let r2 = to.length_squared();
    let cos = w_prev.dot(to / r2.sqrt());
    let fp = scene.mixture_phase_eval(x, cos).unwrap_or(0.0);
    fp * transmittance(scene, x, det.position) / r2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::path_rng;
    use crate::scene::presets::{cube_grid, nadir_camera, single_species, zenith_sun};
    use crate::scene::{Detector, Extinction, LengthUnit, ParticleSpecies, PhaseFunction, SceneSpec};
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point_light(p: Vec3) -> LightSource {
        LightSource::IsotropicPoint {
            position: p,
            radiance: 1.0,
        }
    }

    fn homogeneous(size: f64, dims: usize, beta: f64, light: LightSource) -> Scene {
        let g = cube_grid(size, [dims; 3]);
        let det = nadir_camera(&g, size, 4, 4, 0.6);
        let n = g.voxel_count();
        Scene::new(single_species(
            g,
            LengthUnit::M,
            vec![beta; n],
            0.9,
            PhaseFunction::isotropic(),
            light,
            vec![det],
        ))
        .unwrap()
    }

    fn hetero4() -> Scene {
        let g = cube_grid(1.0, [4; 3]);
        let values = (0..64).map(|i| 0.5 + ((i * 37) % 11) as f64).collect();
        let det = nadir_camera(&g, 2.0, 4, 4, 0.6);
        Scene::new(single_species(
            g,
            LengthUnit::M,
            values,
            0.9,
            PhaseFunction::HenyeyGreenstein { g: 0.5 },
            zenith_sun(1.0),
            vec![det],
        ))
        .unwrap()
    }

    #[test]
    fn transmittance_closed_forms() {
        let c = Vec3::new(0.5, 0.5, 0.5);
        let vac = homogeneous(1.0, 2, 0.0, point_light(c));
        assert_eq!(transmittance(&vac, Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.9, 0.7, 0.6)), 1.0);
        let s = homogeneous(1.0, 2, 2.0, point_light(c));
        let t = transmittance(&s, Vec3::new(0.1, 0.3, 0.3), Vec3::new(0.6, 0.3, 0.3));
        assert!((t - (-1.0f64).exp()).abs() < 1e-15);
        assert!((t - 0.367879).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn transmittance_is_multiplicative(
            x in prop::array::uniform3(0.0f64..1.0),
            z in prop::array::uniform3(0.0f64..1.0),
            s in 0.0f64..1.0,
        ) {
            let sc = hetero4();
            let x = Vec3::from(x);
            let z = Vec3::from(z);
            let y = x + (z - x) * s;
            let lhs = transmittance(&sc, x, z);
            let rhs = transmittance(&sc, x, y) * transmittance(&sc, y, z);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn mean_free_path_is_inverse_extinction() {
        let s = homogeneous(200.0, 1, 1.0, point_light(Vec3::new(100.0, 100.0, 100.0)));
        let tr = Tracer::new(&s, TraceOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let ray = Ray::new(Vec3::new(100.0, 100.0, 100.0), Vec3::new(0.3, -0.2, 0.9));
        let mut sum = 0.0;
        for _ in 0..n {
            match tr.sample_distance(&ray, &mut rng) {
                DistanceSample::Scatter { t, point, .. } => {
                    assert!(s.bounds().contains(point, 0.0));
                    sum += t;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn zero_depth_scatters_at_origin_and_vacuum_escapes() {
        let o = Vec3::new(0.3, 0.4, 0.5);
        let s = homogeneous(1.0, 2, 1.0, point_light(o));
        let tr = Tracer::new(&s, TraceOptions::default());
        match tr.advance(o, Vec3::new(0.0, 0.0, 1.0), 0.0, None) {
            DistanceSample::Scatter { t, point, .. } => {
                assert_eq!(t, 0.0);
                assert_eq!(point, o);
            }
            other => panic!("unexpected {other:?}"),
        }
        let vac = homogeneous(1.0, 2, 0.0, point_light(o));
        let tv = Tracer::new(&vac, TraceOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = uniform_sphere(rng.gen(), rng.gen());
            let r = tv.sample_distance(&Ray::new(o, d), &mut rng);
            assert!(matches!(r, DistanceSample::Escaped { .. }));
        }
    }

    fn cloud_air_scene(beta_c: f64, beta_a: f64) -> Scene {
        let g = cube_grid(1.0, [2; 3]);
        let det = nadir_camera(&g, 2.0, 4, 4, 0.6);
        Scene::new(SceneSpec {
            unit: LengthUnit::Km,
            grid: g,
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
            light: zenith_sun(1.0),
            detectors: vec![det],
        })
        .unwrap()
    }

    #[test]
    fn species_sampling_probabilities() {
        let s = cloud_air_scene(3.0, 1.0);
        let tr = Tracer::new(&s, TraceOptions::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let w = Vec3::new(0.0, 0.6, -0.8);
        let mut cloud = 0usize;
        for _ in 0..n {
            let (d, j, cos) = tr.sample_direction(0, w, &mut rng);
            assert!((d.length() - 1.0).abs() < 1e-12);
            assert!((d.dot(w) - cos).abs() < 1e-9);
            cloud += (j == 0) as usize;
        }
        let p = cloud as f64 / n as f64;
        let sigma = (0.75 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * sigma, "p {p}");

        let one = homogeneous(1.0, 2, 1.0, zenith_sun(1.0));
        let t1 = Tracer::new(&one, TraceOptions::default());
        for _ in 0..1000 {
            assert_eq!(t1.sample_direction(3, w, &mut rng).1, 0);
        }
    }

    #[test]
    fn vacuum_and_zero_bounce_paths() {
        let c = Vec3::new(0.5, 0.5, 0.5);
        let vac = homogeneous(1.0, 2, 0.0, point_light(c));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..100 {
            let r = trace_path(&vac, &mut rng, i, TraceOptions::default());
            assert_eq!(r.size(), 1);
            assert_eq!(r.vertices[1].kind, EventKind::Escape);
            assert!(r.le.is_empty());
        }
        let dense = homogeneous(1.0, 2, 50.0, point_light(c));
        let r = trace_path(&dense, &mut rng, 0, TraceOptions { max_bounces: 0 });
        assert_eq!(r.vertices.len(), 2);
        assert_eq!(r.vertices[0].kind, EventKind::Emission);
        assert_eq!(r.vertices[1].kind, EventKind::Escape);
        assert!(r.truncated);
    }

    /// Independent walker in a homogeneous isotropic box: exponential free
    /// flights, uniform directions, path size = flights until exit.
    fn reference_size<R: Rng>(beta: f64, size: f64, start: Vec3, rng: &mut R) -> usize {
        let mut x = start;
        let mut b = 0;
        loop {
            let z = 1.0 - 2.0 * rng.gen::<f64>();
            let phi = 2.0 * PI * rng.gen::<f64>();
            let s = (1.0 - z * z).sqrt();
            let d = [s * phi.cos(), s * phi.sin(), z];
            let t = -(1.0 - rng.gen::<f64>()).ln() / beta;
            b += 1;
            let mut t_exit = f64::INFINITY;
            for a in 0..3 {
                let p = [x.x, x.y, x.z][a];
                if d[a] > 0.0 {
                    t_exit = t_exit.min((size - p) / d[a]);
                } else if d[a] < 0.0 {
                    t_exit = t_exit.min(-p / d[a]);
                }
            }
            if t >= t_exit {
                return b;
            }
            x = x + Vec3::new(d[0], d[1], d[2]) * t;
        }
    }

    #[test]
    fn mean_path_size_matches_reference_walker() {
        let c = Vec3::new(0.5, 0.5, 0.5);
        let s = homogeneous(1.0, 3, 10.0, point_light(c));
        let n = 100_000;
        let stats = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            (m, v / xs.len() as f64)
        };
        let a: Vec<f64> = (0..n)
            .map(|i| {
                let r = trace_path(&s, &mut path_rng(21, i), i, TraceOptions::default());
                assert!(!r.truncated);
                r.size() as f64
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let b: Vec<f64> = (0..n).map(|_| reference_size(10.0, 1.0, c, &mut rng) as f64).collect();
        let (ma, va) = stats(&a);
        let (mb, vb) = stats(&b);
        assert!((ma - mb).abs() < 3.0 * (va + vb).sqrt(), "{ma} vs {mb}");
    }

    #[test]
    fn path_records_are_consistent() {
        let s = hetero4();
        let top = s.bounds().max.z;
        for i in 0..2000 {
            let r = trace_path(&s, &mut path_rng(4, i), i, TraceOptions::default());
            assert!(r.size() >= 1);
            assert_eq!(r.vertices[0].position.z, top);
            for b in 0..r.size() {
                let a = r.vertices[b].position;
                let c = r.vertices[b + 1].position;
                let len: f64 = r.segment_entries(b).iter().map(|e| e.length as f64).sum();
                assert!((len - (c - a).length()).abs() < 1e-6 * (1.0 + len));
            }
            for m in 1..r.size() {
                let v = &r.vertices[m];
                assert_eq!(v.kind, EventKind::Scatter);
                assert!(s.bounds().contains(v.position, 0.0));
                let cos = r.segment_direction(m - 1).dot(r.segment_direction(m));
                assert!((cos - v.cos).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_estimate_cases() {
        let far = Detector::looking_at(
            Vec3::new(0.5, 0.5, 3.0),
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(0.0, 1.0, 0.0),
            1,
            1,
            0.5,
        );
        let g = cube_grid(1.0, [1; 3]);
        let light = point_light(Vec3::new(0.5, 0.5, 0.5));
        let mk = |beta: f64, det: Detector| {
            Scene::new(single_species(g, LengthUnit::M, vec![beta], 1.0, PhaseFunction::isotropic(), light, vec![det])).unwrap()
        };
        let thin = mk(1e-14, far);
        let x = Vec3::new(0.5, 0.5, 1.0);
        let p = local_estimate(&thin, x, Vec3::new(1.0, 0.0, 0.0), 0, 0);
        let expected = 1.0 / (4.0 * PI) / 4.0;
        assert!((p - expected).abs() < 1e-12 * expected, "{p} vs {expected}");

        let dense = mk(50.0, far);
        let p = local_estimate(&dense, Vec3::new(0.5, 0.5, 0.0), Vec3::new(1.0, 0.0, 0.0), 0, 0);
        assert!(p < 2e-22);

        let four = mk(1e-14, far.with_resolution(2, 2));
        let q = Vec3::new(0.4, 0.6, 1.0);
        let hits: Vec<f64> = (0..4).map(|px| local_estimate(&four, q, Vec3::new(1.0, 0.0, 0.0), 0, px)).collect();
        assert_eq!(hits.iter().filter(|&&h| h > 0.0).count(), 1);
    }
}
