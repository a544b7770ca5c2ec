//! Uncancelled path densities and contributions, recomputed from vertex
//! positions. Slow; used to check the cancelled estimator.

use super::record::{EventKind, PathRecord};
use super::trace::optical_depth;
use crate::geometry::Vec3;
use crate::scene::{pixel_index, LightSource, Scene};
use std::f64::consts::PI;

fn log_initial_density(scene: &Scene) -> f64 {
    match scene.light() {
        LightSource::IsotropicPoint { .. } => -(4.0 * PI).ln(),
        LightSource::DirectionalSun { .. } => {
            let e = scene.bounds().extent();
            -(e.x * e.y).ln()
        }
    }
}

fn log_emission(scene: &Scene) -> f64 {
    match *scene.light() {
        LightSource::IsotropicPoint { radiance, .. } => radiance.ln(),
        LightSource::DirectionalSun { direction, radiance } => (radiance * direction.z.abs()).ln(),
    }
}

fn surface_normal(scene: &Scene, rec: &PathRecord, m: usize) -> Vec3 {
    let v = &rec.vertices[m];
    scene.surfaces()[v.surface as usize].shape.normal_at(v.position)
}

/// Log geometry factor of segment `m - 1 -> m`: `1 / r^2` with the cosine at
/// a receiving surface. The first segment of a parallel sun beam has none.
fn log_geometry(scene: &Scene, rec: &PathRecord, m: usize) -> f64 {
    if m == 1 && matches!(scene.light(), LightSource::DirectionalSun { .. }) {
        return 0.0;
    }
    let a = rec.vertices[m - 1].position;
    let b = rec.vertices[m].position;
    let d = b - a;
    let r2 = d.length_squared();
    let mut g = -r2.ln();
    if rec.vertices[m].kind == EventKind::Reflect {
        g += surface_normal(scene, rec, m).dot(d / r2.sqrt()).abs().ln();
    }
    g
}

fn log_transmittance(scene: &Scene, rec: &PathRecord, m: usize) -> f64 {
    -optical_depth(scene, rec.vertices[m - 1].position, rec.vertices[m].position)
}

fn voxel_at(scene: &Scene, p: Vec3) -> usize {
    let g = scene.grid();
    g.index(g.voxel_of(p).expect("vertex inside bounds"))
}

/// Log factors of interaction vertex `m`: `(ln pdf, ln contribution)`.
/// With `outgoing`, the sampled outgoing direction is included: extinction
/// times phase mixture (pdf) and scattering coefficient times phase mixture
/// (contribution) for scatter vertices, the cosine density and cosine-weighted
/// BRDF for reflect vertices. Without it, only the position factors.
fn log_vertex_factors(scene: &Scene, rec: &PathRecord, m: usize, outgoing: bool) -> (f64, f64) {
    let v = &rec.vertices[m];
    match v.kind {
        EventKind::Scatter => {
            let vox = voxel_at(scene, v.position);
            if outgoing {
                (
                    scene.vertex_density(vox, v.cos).ln(),
                    scene.scattering_density(vox, v.cos).ln(),
                )
            } else {
                (scene.beta_total(vox).ln(), scene.beta_scat(vox).ln())
            }
        }
        EventKind::Reflect if outgoing => {
            let w_out = rec.segment_direction(m);
            let c = surface_normal(scene, rec, m).dot(w_out).abs();
            let fr = scene.surfaces()[v.surface as usize].brdf.eval_dot(v.cos);
            ((c / PI).ln(), (fr * c).ln())
        }
        _ => (0.0, 0.0),
    }
}

fn log_prefix(scene: &Scene, rec: &PathRecord, k: usize, init: f64, pick: fn((f64, f64)) -> f64) -> f64 {
    let mut s = init;
    for m in 1..=k {
        s += log_transmittance(scene, rec, m) + log_geometry(scene, rec, m);
        if m < k {
            s += pick(log_vertex_factors(scene, rec, m, true));
        }
    }
    s
}

/// Log density of sampling the prefix `x_0..x_k` (directions sampled at
/// `x_1..x_{k-1}`).
pub fn log_prefix_pdf(scene: &Scene, rec: &PathRecord, k: usize) -> f64 {
    let s = log_prefix(scene, rec, k, log_initial_density(scene), |x| x.0);
    s + log_vertex_factors(scene, rec, k, false).0
}

/// Log contribution of the prefix `x_0..x_k`, excluding every factor of
/// vertex `k` itself.
pub fn log_prefix_contribution(scene: &Scene, rec: &PathRecord, k: usize) -> f64 {
    log_prefix(scene, rec, k, log_emission(scene), |x| x.1)
}

/// Density of the whole path under `scene`: the prefix up to the last
/// interaction, its outgoing direction, and the probability of the final
/// escape (transmittance only).
pub fn path_pdf(scene: &Scene, rec: &PathRecord) -> f64 {
    let b = rec.size();
    let last = b - 1;
    let mut s = log_prefix(scene, rec, last, log_initial_density(scene), |x| x.0);
    if last >= 1 {
        s += log_vertex_factors(scene, rec, last, true).0;
    }
    s += log_transmittance(scene, rec, b);
    s.exp()
}

/// Contribution of local-estimation event `e` (uncancelled).
pub fn event_contribution(scene: &Scene, rec: &PathRecord, e: usize) -> f64 {
    let ev = &rec.le[e];
    let k = ev.vertex as usize;
    let det = &scene.detectors()[ev.detector as usize];
    let x = rec.vertices[k].position;
    let to = det.position - x;
    let r2 = to.length_squared();
    let w_le = to / r2.sqrt();
    let v = &rec.vertices[k];
    let w_in = rec.segment_direction(k - 1);
    let connect = match v.kind {
        EventKind::Scatter => {
            let vox = voxel_at(scene, x);
            scene.scattering_density(vox, w_in.dot(w_le)) / r2
        }
        EventKind::Reflect => {
            let n = surface_normal(scene, rec, k);
            let mirror = w_in.reflect(n);
            let fr = scene.surfaces()[v.surface as usize].brdf.eval_dot(w_le.dot(mirror));
            fr * n.dot(w_le).abs() / r2
        }
        _ => 0.0,
    };
    let t_le = (-optical_depth(scene, x, det.position)).exp();
    log_prefix_contribution(scene, rec, k).exp() * connect * t_le
}

/// Measurement contribution of `rec` to one pixel: the sum over its
/// local-estimation events landing there.
pub fn path_contribution(scene: &Scene, rec: &PathRecord, detector: usize, pixel: usize) -> f64 {
    let det = &scene.detectors()[detector];
    (0..rec.le.len())
        .filter(|&e| {
            let ev = &rec.le[e];
            ev.detector as usize == detector && pixel_index(ev.u as f64, ev.v as f64, det.rows, det.cols) == pixel
        })
        .map(|e| event_contribution(scene, rec, e))
        .sum()
}
