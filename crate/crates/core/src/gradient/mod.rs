//! Score functions and Monte-Carlo gradients of the recycled forward model.
//!
//! Each local-estimation event is differentiated on its own prefix: every
//! segment up to the event vertex, every direction sampled on the way, the
//! connection term at the event vertex and the segment to the detector.

use crate::accum::ExactVec;
use crate::image::{check_shapes, Image, ImageError};
use crate::parallel::{resolve_workers, run_chunks};
use crate::pathstore::{PathStore, StoreError};
use crate::scene::{Brdf, PhongBrdf, Scene, SceneError};
use crate::transport::{chunk_count, source_prefactor, Evaluator, EventKind, PathRecord, PixelLayout, PATH_CHUNK};
use std::collections::BTreeMap;

/// Which parameters are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// Per-voxel extinction of one species. With `compat`, the scatter-vertex
    /// score uses `1 / beta` in place of the albedo-weighted phase ratio.
    Tomography { species: usize, compat: bool },
    /// Phong `(kappa_s, gamma)` of one surface.
    Reflectometry { surface: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum GradientError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Problem(String),
}

impl Problem {
    pub fn unknowns(&self, scene: &Scene) -> usize {
        match self {
            Problem::Tomography { .. } => scene.voxel_count(),
            Problem::Reflectometry { .. } => 2,
        }
    }

    fn check(&self, scene: &Scene) -> Result<(), GradientError> {
        match *self {
            Problem::Tomography { species, .. } if species >= scene.species().len() => {
                Err(GradientError::Problem(format!("no species {species}")))
            }
            Problem::Reflectometry { surface } => match scene.surfaces().get(surface).map(|s| s.brdf) {
                Some(Brdf::Phong { .. }) => Ok(()),
                _ => Err(GradientError::Problem(format!("surface {surface} is not a Phong surface"))),
            },
            _ => Ok(()),
        }
    }

    /// Current values of the unknowns.
    pub fn values(&self, scene: &Scene) -> Result<Vec<f64>, GradientError> {
        self.check(scene)?;
        Ok(match *self {
            Problem::Tomography { species, .. } => scene.species_values(species).to_vec(),
            Problem::Reflectometry { surface } => {
                let p = scene.surfaces()[surface].brdf.phong().expect("checked");
                vec![p.kappa_s, p.gamma]
            }
        })
    }

    /// `scene` with the unknowns replaced by `x`.
    pub fn apply(&self, scene: &Scene, x: &[f64]) -> Result<Scene, GradientError> {
        self.check(scene)?;
        if x.len() != self.unknowns(scene) {
            return Err(GradientError::Problem(format!(
                "expected {} unknowns, got {}",
                self.unknowns(scene),
                x.len()
            )));
        }
        Ok(match *self {
            Problem::Tomography { species, .. } => scene.with_species_extinction(species, x)?,
            Problem::Reflectometry { surface } => scene.with_surface_brdf(
                surface,
                Brdf::Phong {
                    kappa_s: x[0],
                    gamma: x[1],
                },
            )?,
        })
    }
}

/// Sparse map from unknown index to value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGradient {
    pub entries: BTreeMap<usize, f64>,
}

impl SparseGradient {
    pub fn add(&mut self, v: usize, x: f64) {
        *self.entries.entry(v).or_insert(0.0) += x;
    }

    pub fn get(&self, v: usize) -> f64 {
        self.entries.get(&v).copied().unwrap_or(0.0)
    }

    /// Keeps the non-zero entries of `x`.
    pub fn from_dense(x: &[f64]) -> Self {
        SparseGradient {
            entries: x.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(i, &v)| (i, v)).collect(),
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&i, &v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Tomography score of the prefix of local-estimation event `e`: derivative
/// of the log event weight with respect to the extinction of `species` per
/// voxel.
pub fn psf_tomography(rec: &PathRecord, scene: &Scene, species: usize, e: usize, compat: bool) -> SparseGradient {
    let mut s = SparseGradient::default();
    let ev = &rec.le[e];
    let k = ev.vertex as usize;
    for b in 0..k {
        for x in rec.segment_entries(b) {
            s.add(x.voxel as usize, -(x.length as f64));
        }
    }
    for x in rec.span_entries(ev.span) {
        s.add(x.voxel as usize, -(x.length as f64));
    }
    for m in 1..=k {
        let v = &rec.vertices[m];
        if v.kind == EventKind::Scatter {
            let cos = if m == k { ev.cos } else { v.cos };
            let vox = v.voxel as usize;
            if let Some(d) = scatter_score(scene, species, vox, cos, compat) {
                s.add(vox, d);
            }
        }
    }
    s
}

/// Phong score `(d/d kappa_s, d/d gamma)` of the prefix of event `e` for
/// reflections on `surface`.
pub fn psf_phong(rec: &PathRecord, brdf: PhongBrdf, surface: usize, e: usize) -> (f64, f64) {
    let ev = &rec.le[e];
    let k = ev.vertex as usize;
    let mut s = (0.0, 0.0);
    for m in 1..=k {
        let v = &rec.vertices[m];
        if v.kind == EventKind::Reflect && v.surface as usize == surface {
            let cos = if m == k { ev.cos } else { v.cos };
            if let Some((a, b)) = phong_score(brdf, cos) {
                s.0 += a;
                s.1 += b;
            }
        }
    }
    s
}

#[inline]
fn scatter_score(scene: &Scene, species: usize, vox: usize, cos: f64, compat: bool) -> Option<f64> {
    if compat {
        let b = scene.beta_total(vox);
        return (b > 0.0).then(|| 1.0 / b);
    }
    let h = scene.scattering_density(vox, cos);
    (h > 0.0).then(|| scene.species_albedo(species) * scene.species_phase(species).eval(cos) / h)
}

#[inline]
fn phong_score(brdf: PhongBrdf, cos: f64) -> Option<(f64, f64)> {
    let f = brdf.eval_dot(cos);
    if f <= 0.0 {
        return None;
    }
    let (dk, dg) = brdf.gradient_dot(cos);
    Some((dk / f, dg / f))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientOptions {
    pub workers: Option<usize>,
}

struct Pass<'a> {
    ev: Evaluator<'a>,
    problem: Problem,
    /// Per global pixel multiplier of `dF_p / dm`.
    pixel_weights: &'a [f64],
    scale: f64,
    brdf: Option<PhongBrdf>,
}

struct Scratch {
    w: Vec<f64>,
    a: Vec<f64>,
    /// Suffix sums of event coefficients by vertex.
    g: Vec<f64>,
}

impl Pass<'_> {
    /// Adds the gradient contribution of one path to `out`.
    fn add_path(&self, rec: &PathRecord, out: &mut [f64], sc: &mut Scratch) {
        if rec.le.is_empty() {
            return;
        }
        let layout = self.ev.layout();
        sc.w.clear();
        self.ev.event_weights(rec, &mut sc.w);
        sc.a.clear();
        let mut any = false;
        for (e, &w) in rec.le.iter().zip(&sc.w) {
            let a = self.pixel_weights[layout.pixel(e)] * w * self.scale;
            any |= a != 0.0;
            sc.a.push(a);
        }
        if !any {
            return;
        }
        let nv = rec.vertices.len();
        sc.g.clear();
        sc.g.resize(nv + 1, 0.0);
        for (e, &a) in rec.le.iter().zip(&sc.a) {
            sc.g[e.vertex as usize] += a;
        }
        for b in (0..nv).rev() {
            sc.g[b] += sc.g[b + 1];
        }
        let t = self.ev.current();
        match self.problem {
            Problem::Tomography { species, compat } => {
                let last = rec.le.last().map_or(0, |e| e.vertex as usize);
                for s in 0..last {
                    let g = sc.g[s + 1];
                    if g != 0.0 {
                        for x in rec.segment_entries(s) {
                            out[x.voxel as usize] -= g * x.length as f64;
                        }
                    }
                    let m = s + 1;
                    let v = &rec.vertices[m];
                    let gn = sc.g[m + 1];
                    if v.kind == EventKind::Scatter && gn != 0.0 {
                        let vox = v.voxel as usize;
                        if let Some(d) = scatter_score(t, species, vox, v.cos, compat) {
                            out[vox] += gn * d;
                        }
                    }
                }
                for (e, &a) in rec.le.iter().zip(&sc.a) {
                    if a == 0.0 {
                        continue;
                    }
                    for x in rec.span_entries(e.span) {
                        out[x.voxel as usize] -= a * x.length as f64;
                    }
                    let v = &rec.vertices[e.vertex as usize];
                    if v.kind == EventKind::Scatter {
                        let vox = v.voxel as usize;
                        if let Some(d) = scatter_score(t, species, vox, e.cos, compat) {
                            out[vox] += a * d;
                        }
                    }
                }
            }
            Problem::Reflectometry { surface } => {
                let brdf = self.brdf.expect("checked");
                for m in 1..nv {
                    let v = &rec.vertices[m];
                    if v.kind != EventKind::Reflect || v.surface as usize != surface {
                        continue;
                    }
                    let gn = sc.g[m + 1];
                    if gn != 0.0 {
                        if let Some((dk, dg)) = phong_score(brdf, v.cos) {
                            out[0] += gn * dk;
                            out[1] += gn * dg;
                        }
                    }
                }
                for (e, &a) in rec.le.iter().zip(&sc.a) {
                    let v = &rec.vertices[e.vertex as usize];
                    if a != 0.0 && v.kind == EventKind::Reflect && v.surface as usize == surface {
                        if let Some((dk, dg)) = phong_score(brdf, e.cos) {
                            out[0] += a * dk;
                            out[1] += a * dg;
                        }
                    }
                }
            }
        }
    }
}

/// `sum_p pixel_weights[p] * dF_p / dm` for the recycled estimate under `t`
/// from paths sampled under `r`.
pub fn weighted_gradient(
    store: &PathStore,
    t: &Scene,
    r: &Scene,
    problem: Problem,
    pixel_weights: &[f64],
    options: GradientOptions,
) -> Result<Vec<f64>, GradientError> {
    if store.reference() != r.fingerprint() {
        return Err(StoreError::ReferenceMismatch.into());
    }
    if store.is_empty() {
        return Err(StoreError::Empty.into());
    }
    problem.check(t)?;
    let ev = Evaluator::new(t, r).map_err(|e| StoreError::Incompatible(e.to_string()))?;
    if pixel_weights.len() != ev.layout().total() {
        return Err(GradientError::Problem(format!(
            "expected {} pixel weights, got {}",
            ev.layout().total(),
            pixel_weights.len()
        )));
    }
    let n = store.len();
    let unknowns = problem.unknowns(t);
    let brdf = match problem {
        Problem::Reflectometry { surface } => t.surfaces()[surface].brdf.phong(),
        _ => None,
    };
    let pass = Pass {
        ev,
        problem,
        pixel_weights,
        scale: source_prefactor(t) / n as f64,
        brdf,
    };
    let records = store.records();
    let states = run_chunks(
        resolve_workers(options.workers),
        chunk_count(n),
        || {
            (
                ExactVec::zeros(unknowns),
                vec![0.0; unknowns],
                Scratch {
                    w: Vec::new(),
                    a: Vec::new(),
                    g: Vec::new(),
                },
            )
        },
        |(acc, dense, sc), c| {
            dense.iter_mut().for_each(|x| *x = 0.0);
            let lo = c * PATH_CHUNK;
            for rec in &records[lo..(lo + PATH_CHUNK).min(n)] {
                pass.add_path(rec, dense, sc);
            }
            for (i, &x) in dense.iter().enumerate() {
                if x != 0.0 {
                    acc.add(i, x);
                }
            }
        },
    );
    let mut total = ExactVec::zeros(unknowns);
    for (acc, _, _) in &states {
        total.merge(acc);
    }
    Ok(total.values())
}

/// Jacobian rows `dF_p / dm`, one per global pixel (detectors in order).
/// One pass per pixel; meant for small problems and tests.
pub fn grad_forward(
    store: &PathStore,
    t: &Scene,
    r: &Scene,
    problem: Problem,
    options: GradientOptions,
) -> Result<Vec<SparseGradient>, GradientError> {
    let total = PixelLayout::new(t).total();
    let mut rows = Vec::with_capacity(total);
    let mut onehot = vec![0.0; total];
    for p in 0..total {
        onehot[p] = 1.0;
        rows.push(SparseGradient::from_dense(&weighted_gradient(store, t, r, problem, &onehot, options)?));
        onehot[p] = 0.0;
    }
    Ok(rows)
}

/// `sum_p (F_p - I_p) dF_p / dm` from a Jacobian.
pub fn loss_gradient(forward: &[Image], gt: &[Image], jacobian: &[SparseGradient]) -> Result<SparseGradient, ImageError> {
    check_shapes(forward, gt)?;
    let mut out = SparseGradient::default();
    let residuals = forward.iter().zip(gt).flat_map(|(f, g)| f.data.iter().zip(&g.data).map(|(a, b)| a - b));
    for (res, row) in residuals.zip(jacobian) {
        for (&v, &d) in &row.entries {
            out.add(v, res * d);
        }
    }
    Ok(out)
}

/// Residuals `F - I` flattened over all detectors.
pub fn residuals(forward: &[Image], gt: &[Image]) -> Result<Vec<f64>, ImageError> {
    check_shapes(forward, gt)?;
    Ok(forward
        .iter()
        .zip(gt)
        .flat_map(|(f, g)| f.data.iter().zip(&g.data).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::oracles::{default_step, finite_difference_grad};
    use crate::pathstore::{recycled_render, segment_lengths, RecycleOptions};
    use crate::scene::presets::{camera_ring, cube_grid, nadir_camera, zenith_sun};
    use crate::scene::{
        Detector, Extinction, GridGeometry, LengthUnit, LightSource, ParticleSpecies, PhaseFunction, SceneSpec,
        Shape, Surface, VoxelGridField,
    };
    use crate::transport::{render, traverse, Entry, LeEvent, RenderOptions, Span, Vertex, NONE};

    fn cloud_air(grid: GridGeometry, cloud: Vec<f64>, air: f64, light: LightSource, dets: Vec<Detector>) -> Scene {
        Scene::new(SceneSpec {
            unit: LengthUnit::Km,
            grid,
            species: vec![
                ParticleSpecies {
                    extinction: Extinction::Grid(VoxelGridField::new(grid, LengthUnit::Km, cloud)),
                    albedo: 0.99,
                    phase: PhaseFunction::HenyeyGreenstein { g: 0.85 },
                },
                ParticleSpecies {
                    extinction: Extinction::Constant(air),
                    albedo: 0.912,
                    phase: PhaseFunction::Rayleigh,
                },
            ],
            surfaces: vec![],
            light,
            detectors: dets,
        })
        .unwrap()
    }

    fn small() -> Scene {
        let g = cube_grid(1.0, [2; 3]);
        let mut dets = camera_ring(&g, 2.0, 1.0, 2, 3, 3, 0.9);
        dets.push(nadir_camera(&g, 2.0, 4, 4, 0.8));
        cloud_air(g, vec![1.0, 2.5, 0.5, 3.0, 1.5, 0.2, 2.0, 4.0], 0.3, zenith_sun(1.0), dets)
    }

    fn stored(s: &Scene, n: usize, seed: u64) -> PathStore {
        render(
            s,
            n,
            seed,
            RenderOptions {
                keep_store: true,
                ..Default::default()
            },
        )
        .unwrap()
        .store
        .unwrap()
    }

    fn pixel_weights(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect()
    }

    fn weighted_forward(store: &PathStore, t: &Scene, r: &Scene, c: &[f64]) -> f64 {
        let out = recycled_render(store, t, r, RecycleOptions::default()).unwrap();
        let flat: Vec<f64> = out.images.iter().flat_map(|im| im.data.clone()).collect();
        flat.iter().zip(c).map(|(a, b)| a * b).sum()
    }

    fn assert_close(g: f64, fd: f64, what: &str) {
        let tol = (1e-6 * fd.abs()).max(1e-10);
        assert!((g - fd).abs() <= tol, "{what}: {g} vs {fd}");
    }

    #[test]
    fn tomography_gradient_matches_finite_differences() {
        let r = small();
        let store = stored(&r, 20_000, 3);
        let problem = Problem::Tomography {
            species: 0,
            compat: false,
        };
        let c = pixel_weights(PixelLayout::new(&r).total());
        let x0 = problem.values(&r).unwrap();
        let idx: Vec<usize> = (0..8).collect();
        for x in [x0.clone(), x0.iter().map(|v| v * 1.05 + 0.01).collect::<Vec<_>>()] {
            let t = problem.apply(&r, &x).unwrap();
            let g = weighted_gradient(&store, &t, &r, problem, &c, GradientOptions::default()).unwrap();
            let fd = finite_difference_grad(
                |m| weighted_forward(&store, &problem.apply(&r, m).unwrap(), &r, &c),
                &x,
                &idx,
                default_step,
            );
            for v in 0..8 {
                assert_close(g[v], fd.get(v), &format!("voxel {v}"));
            }
        }
    }

    #[test]
    fn compat_flag_changes_only_scatter_terms() {
        let r = small();
        let store = stored(&r, 5000, 4);
        let c = pixel_weights(PixelLayout::new(&r).total());
        let a = weighted_gradient(&store, &r, &r, Problem::Tomography { species: 0, compat: false }, &c, Default::default()).unwrap();
        let b = weighted_gradient(&store, &r, &r, Problem::Tomography { species: 0, compat: true }, &c, Default::default()).unwrap();
        assert_ne!(a, b);
        // with a single species and unit albedo the two readings coincide
        let g = cube_grid(1.0, [2; 3]);
        let one = Scene::new(crate::scene::presets::single_species(
            g,
            LengthUnit::M,
            vec![1.0, 2.0, 0.5, 1.5, 2.5, 0.7, 1.1, 3.0],
            1.0,
            PhaseFunction::HenyeyGreenstein { g: 0.4 },
            zenith_sun(1.0),
            vec![nadir_camera(&g, 2.0, 3, 3, 0.8)],
        ))
        .unwrap();
        let st = stored(&one, 3000, 5);
        let c = vec![1.0; 9];
        let a = weighted_gradient(&st, &one, &one, Problem::Tomography { species: 0, compat: false }, &c, Default::default()).unwrap();
        let b = weighted_gradient(&st, &one, &one, Problem::Tomography { species: 0, compat: true }, &c, Default::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn fused_pass_equals_per_event_scores_and_is_linear() {
        let r = small();
        let store = stored(&r, 3000, 6);
        let layout = PixelLayout::new(&r);
        let c = pixel_weights(layout.total());
        let problem = Problem::Tomography {
            species: 0,
            compat: false,
        };
        let g = weighted_gradient(&store, &r, &r, problem, &c, Default::default()).unwrap();
        let ev = Evaluator::new(&r, &r).unwrap();
        let scale = source_prefactor(&r) / store.len() as f64;
        let mut direct = vec![0.0; 8];
        let mut w = Vec::new();
        for rec in store.records() {
            w.clear();
            ev.event_weights(rec, &mut w);
            for e in 0..rec.le.len() {
                let a = c[layout.pixel(&rec.le[e])] * w[e] * scale;
                for (&v, &s) in &psf_tomography(rec, &r, 0, e, false).entries {
                    direct[v] += a * s;
                }
            }
        }
        for v in 0..8 {
            assert!((g[v] - direct[v]).abs() <= 1e-9 * direct[v].abs().max(1e-9), "{v}");
        }

        let split = |lo: usize, hi: usize| -> Vec<f64> {
            let cc: Vec<f64> = (0..layout.total()).map(|p| if p >= lo && p < hi { 1.0 } else { 0.0 }).collect();
            weighted_gradient(&store, &r, &r, problem, &cc, Default::default()).unwrap()
        };
        let all = split(0, layout.total());
        let parts = [split(0, 9), split(9, 18), split(18, layout.total())];
        for v in 0..8 {
            let sum: f64 = parts.iter().map(|p| p[v]).sum();
            assert!((all[v] - sum).abs() <= 1e-12 * all[v].abs().max(1e-12));
        }

        let w4: Vec<f64> = (0..layout.total()).map(|_| 1.0).collect();
        let workers: Vec<Vec<f64>> = [1, 2, 5]
            .iter()
            .map(|&k| weighted_gradient(&store, &r, &r, problem, &w4, GradientOptions { workers: Some(k) }).unwrap())
            .collect();
        assert_eq!(workers[0], workers[1]);
        assert_eq!(workers[0], workers[2]);
    }

    #[test]
    fn jacobian_rows_and_loss_gradient() {
        let r = small();
        let store = stored(&r, 2000, 8);
        let problem = Problem::Tomography {
            species: 0,
            compat: false,
        };
        let jac = grad_forward(&store, &r, &r, problem, Default::default()).unwrap();
        let layout = PixelLayout::new(&r);
        assert_eq!(jac.len(), layout.total());
        let fwd = recycled_render(&store, &r, &r, RecycleOptions::default()).unwrap().images;
        let gt: Vec<Image> = fwd
            .iter()
            .map(|im| Image::from_data(im.rows, im.cols, im.data.iter().enumerate().map(|(i, x)| x * (1.0 + 0.01 * (i % 3) as f64)).collect()))
            .collect();
        let lg = loss_gradient(&fwd, &gt, &jac).unwrap();
        let res = residuals(&fwd, &gt).unwrap();
        let fused = weighted_gradient(&store, &r, &r, problem, &res, Default::default()).unwrap();
        for v in 0..8 {
            assert!((lg.get(v) - fused[v]).abs() <= 1e-9 * fused[v].abs().max(1e-12));
        }
        assert!(loss_gradient(&fwd, &fwd, &jac).unwrap().entries.values().all(|&x| x == 0.0));
        assert!(loss_gradient(&fwd, &gt[..1], &jac).is_err());

        let one = [Image::from_data(1, 1, vec![1.5])];
        let truth = [Image::from_data(1, 1, vec![1.0])];
        let mut row = SparseGradient::default();
        row.add(0, 1.0);
        assert_eq!(loss_gradient(&one, &truth, &[row]).unwrap().get(0), 0.5);
    }

    #[test]
    fn untouched_voxels_have_zero_gradient() {
        let g = cube_grid(1.0, [4; 3]);
        let vals: Vec<f64> = (0..64).map(|i| 1.0 + (i % 3) as f64).collect();
        let s = cloud_air(g, vals, 0.1, zenith_sun(1.0), vec![nadir_camera(&g, 2.0, 4, 4, 0.8)]);
        let store = stored(&s, 40, 1);
        let c = vec![1.0; 16];
        let grad = weighted_gradient(&store, &s, &s, Problem::Tomography { species: 0, compat: false }, &c, Default::default()).unwrap();
        let mut touched = vec![false; 64];
        for r in store.records() {
            for e in &r.entries {
                touched[e.voxel as usize] = true;
            }
        }
        let untouched: Vec<usize> = (0..64).filter(|&v| !touched[v]).collect();
        assert!(!untouched.is_empty());
        for v in untouched {
            assert_eq!(grad[v], 0.0);
        }
    }

    #[test]
    fn occluder_gradient_is_negative() {
        // light in the bottom voxel, scattering column above it, camera on top
        let grid = GridGeometry::new([1, 1, 3], Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
        let light = LightSource::IsotropicPoint {
            position: Vec3::new(0.5, 0.5, 0.5),
            radiance: 1.0,
        };
        let det = Detector::looking_at(
            Vec3::new(0.5, 0.5, 6.0),
            Vec3::new(0.5, 0.5, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            1,
            1,
            0.4,
        );
        let s = cloud_air(grid, vec![1.0, 1.0, 3.0], 0.05, light, vec![det]);
        let store = stored(&s, 20_000, 2);
        let problem = Problem::Tomography {
            species: 0,
            compat: false,
        };
        let g = weighted_gradient(&store, &s, &s, problem, &[1.0], Default::default()).unwrap();
        assert!(g[2] < 0.0);
        let f = |x: f64| weighted_forward(&store, &problem.apply(&s, &[1.0, 1.0, x]).unwrap(), &s, &[1.0]);
        assert!(f(3.3) < f(3.0));
    }

    #[test]
    fn hand_expanded_two_segment_score() {
        let grid = GridGeometry::new([2, 1, 1], Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
        let det = Detector::looking_at(
            Vec3::new(1.5, 0.5, 3.0),
            Vec3::new(1.5, 0.5, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            1,
            1,
            0.4,
        );
        let light = LightSource::IsotropicPoint {
            position: Vec3::new(0.5, 0.5, 0.5),
            radiance: 1.0,
        };
        let (bc, ba) = (2.0, 0.3);
        let s = cloud_air(grid, vec![1.0, bc], ba, light, vec![det]);
        let v = |p: Vec3, kind: EventKind, voxel: u32| Vertex {
            position: p,
            cos: 0.0,
            voxel,
            surface: NONE,
            kind,
            species: 0,
        };
        let rec = PathRecord {
            path_index: 0,
            initial_direction: Vec3::new(1.0, 0.0, 0.0),
            truncated: true,
            vertices: vec![
                v(Vec3::new(0.5, 0.5, 0.5), EventKind::Emission, NONE),
                v(Vec3::new(1.5, 0.5, 0.5), EventKind::Scatter, 1),
                v(Vec3::new(1.5, 0.5, 0.5), EventKind::Escape, NONE),
            ],
            segments: vec![Span { start: 0, end: 2 }, Span { start: 3, end: 3 }],
            le: vec![LeEvent {
                vertex: 1,
                detector: 0,
                u: 0.0,
                v: 0.0,
                cos: 0.0,
                geom: 1.0 / 6.25,
                tau: (bc + ba) * 0.5,
                span: Span { start: 2, end: 3 },
            }],
            entries: vec![
                Entry { voxel: 0, length: 0.5 },
                Entry { voxel: 1, length: 0.5 },
                Entry { voxel: 1, length: 0.5 },
            ],
        };
        let fc = PhaseFunction::HenyeyGreenstein { g: 0.85 }.eval(0.0);
        let fa = PhaseFunction::Rayleigh.eval(0.0);
        let expected_v1 = -1.0 + 0.99 * fc / (0.99 * bc * fc + 0.912 * ba * fa);
        let sc = psf_tomography(&rec, &s, 0, 0, false);
        assert!((sc.get(1) - expected_v1).abs() < 1e-12 * expected_v1.abs());
        assert_eq!(sc.get(0), -0.5);
        let compat = psf_tomography(&rec, &s, 0, 0, true);
        assert!((compat.get(1) - (-1.0 + 1.0 / (bc + ba))).abs() < 1e-12);
    }

    #[test]
    fn first_score_term_is_minus_prefix_length() {
        let r = small();
        let store = stored(&r, 300, 9);
        let g = r.grid();
        let mut checked = 0;
        for rec in store.records() {
            let segs = segment_lengths(rec, g);
            for (e, ev) in rec.le.iter().enumerate() {
                let k = ev.vertex as usize;
                let det = &r.detectors()[ev.detector as usize];
                let x = rec.vertices[k].position;
                let le = traverse(g, &crate::geometry::Ray::new(x, det.position - x), (det.position - x).length());
                let mut len = [0.0; 8];
                for s in &segs[..k] {
                    for &(v, l) in &s.entries {
                        len[v] += l;
                    }
                }
                for &(v, l) in &le.entries {
                    len[v] += l;
                }
                let score = psf_tomography(rec, &r, 0, e, false);
                let scatter_voxels: Vec<usize> = rec.vertices[1..=k].iter().map(|v| v.voxel as usize).collect();
                for v in 0..8 {
                    if !scatter_voxels.contains(&v) {
                        assert!((score.get(v) + len[v]).abs() < 1e-6 * (1.0 + len[v]));
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    fn phong_scene(kappa: f64, gamma: f64) -> Scene {
        let g = cube_grid(4.0, [1; 3]);
        let spec = SceneSpec {
            unit: LengthUnit::M,
            grid: g,
            species: vec![ParticleSpecies {
                extinction: Extinction::Constant(0.0),
                albedo: 0.0,
                phase: PhaseFunction::isotropic(),
            }],
            surfaces: vec![
                Surface {
                    shape: Shape::Sphere {
                        center: Vec3::new(2.0, 2.0, 1.2),
                        radius: 0.8,
                    },
                    brdf: Brdf::Phong { kappa_s: kappa, gamma },
                },
                Surface {
                    shape: Shape::BoxFace {
                        min: Vec3::new(0.0, 0.0, 0.0),
                        max: Vec3::new(4.0, 4.0, 0.0),
                    },
                    brdf: Brdf::Diffuse { albedo: 0.7 },
                },
            ],
            light: LightSource::IsotropicPoint {
                position: Vec3::new(2.0, 1.0, 3.0),
                radiance: 5.0,
            },
            detectors: camera_ring(&g, 1.5, 1.5, 3, 4, 4, 1.0),
        };
        Scene::new(spec).unwrap()
    }

    #[test]
    fn phong_gradient_matches_finite_differences() {
        let r = phong_scene(0.5, 30.0);
        let store = stored(&r, 20_000, 12);
        let problem = Problem::Reflectometry { surface: 0 };
        let c = pixel_weights(PixelLayout::new(&r).total());
        for x in [vec![0.5, 30.0], vec![0.45, 27.0]] {
            let t = problem.apply(&r, &x).unwrap();
            let g = weighted_gradient(&store, &t, &r, problem, &c, Default::default()).unwrap();
            assert!(g[0] != 0.0 && g[1] != 0.0);
            let fd = finite_difference_grad(
                |m| weighted_forward(&store, &problem.apply(&r, m).unwrap(), &r, &c),
                &x,
                &[0, 1],
                default_step,
            );
            assert_close(g[0], fd.get(0), "kappa");
            assert_close(g[1], fd.get(1), "gamma");
        }
        assert!(matches!(
            weighted_gradient(&store, &r, &r, Problem::Reflectometry { surface: 1 }, &c, Default::default()),
            Err(GradientError::Problem(_))
        ));
    }

    #[test]
    fn phong_score_cases() {
        let b = PhongBrdf::new(0.5, 30.0);
        assert_eq!(phong_score(b, 1.0), Some((0.0, 0.0)));
        let rec = PathRecord::default();
        let _ = rec;
        let (dk, dg) = phong_score(b, 0.0).unwrap();
        assert_eq!(dg, 0.0);
        assert!((dk - (-1.0 / 0.5)).abs() < 1e-15);
        assert_eq!(phong_score(PhongBrdf::new(1.0, 5.0), 0.0), None);
    }
}
