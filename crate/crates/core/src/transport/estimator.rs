//! Per-event weights of stored paths under (possibly changed) parameters.
//!
//! Every scatter or reflect vertex `k` of a path contributes one
//! local-estimation term per detector that sees it. Its weight is the ratio
//! of the measurement contribution of the sub-path `x_0..x_k, x_d` under the
//! current parameters to the density with which `x_0..x_k` was sampled under
//! the reference parameters. Geometry and the shared transmittance factors
//! cancel, leaving per-vertex ratios, transmittance differences over the
//! stored voxel lengths, and the connection term.

use super::record::{EventKind, LeEvent, PathRecord};
use crate::accum::ExactVec;
use crate::image::Image;
use crate::scene::{pixel_index, LightSource, Scene};
use std::f64::consts::PI;

/// Log-weights beyond this magnitude are clamped (and counted).
pub const LOG_CLAMP: f64 = 700.0;

/// Estimator normalization per path: `4 pi L_e` for a point light, the
/// projected top-face area times `L_e` for the sun.
pub fn source_prefactor(scene: &Scene) -> f64 {
    match *scene.light() {
        LightSource::IsotropicPoint { radiance, .. } => 4.0 * PI * radiance,
        LightSource::DirectionalSun { direction, radiance } => {
            let e = scene.bounds().extent();
            e.x * e.y * direction.z.abs() * radiance
        }
    }
}

/// Maps local-estimation events to global pixel indices at the scene's
/// current detector resolutions.
#[derive(Debug, Clone)]
pub struct PixelLayout {
    dims: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
}

impl PixelLayout {
    pub fn new(scene: &Scene) -> Self {
        let dims: Vec<(usize, usize)> = scene.detectors().iter().map(|d| (d.rows, d.cols)).collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut total = 0;
        for &(r, c) in &dims {
            offsets.push(total);
            total += r * c;
        }
        PixelLayout { dims, offsets, total }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn pixel(&self, e: &LeEvent) -> usize {
        let d = e.detector as usize;
        let (r, c) = self.dims[d];
        self.offsets[d] + pixel_index(e.u as f64, e.v as f64, r, c)
    }

    /// Splits a flat pixel vector into per-detector images scaled by `scale`.
    pub fn split(&self, values: &[f64], scale: f64) -> Vec<Image> {
        self.dims
            .iter()
            .zip(&self.offsets)
            .map(|(&(r, c), &o)| Image::from_data(r, c, values[o..o + r * c].iter().map(|x| x * scale).collect()))
            .collect()
    }

    /// Concatenates per-detector images into one flat vector.
    pub fn flatten(&self, images: &[Image]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for img in images {
            out.extend_from_slice(&img.data);
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("parameter sets are incompatible: {0}")]
    Incompatible(String),
}

/// Evaluates stored paths under parameters `t`, given that they were sampled
/// under `r`.
pub struct Evaluator<'a> {
    t: &'a Scene,
    r: &'a Scene,
    /// `beta_t - beta_r` per voxel; `None` when the extinctions agree.
    dbeta: Option<Vec<f64>>,
    layout: PixelLayout,
}

impl<'a> Evaluator<'a> {
    pub fn new(t: &'a Scene, r: &'a Scene) -> Result<Self, EstimatorError> {
        if t.grid() != r.grid() || t.species().len() != r.species().len() || t.surfaces().len() != r.surfaces().len()
        {
            return Err(EstimatorError::Incompatible(
                "grid, species or surfaces differ".to_string(),
            ));
        }
        let same = t.beta_total_table() == r.beta_total_table();
        let dbeta = (!same).then(|| {
            t.beta_total_table()
                .iter()
                .zip(r.beta_total_table())
                .map(|(a, b)| a - b)
                .collect()
        });
        Ok(Evaluator {
            t,
            r,
            dbeta,
            layout: PixelLayout::new(t),
        })
    }

    pub fn current(&self) -> &Scene {
        self.t
    }

    pub fn reference(&self) -> &Scene {
        self.r
    }

    pub fn layout(&self) -> &PixelLayout {
        &self.layout
    }

    #[inline]
    fn weight(logw: f64, clamps: &mut u32) -> f64 {
        if logw == f64::NEG_INFINITY {
            0.0
        } else if logw > LOG_CLAMP {
            *clamps += 1;
            LOG_CLAMP.exp()
        } else if logw < -LOG_CLAMP {
            *clamps += 1;
            (-LOG_CLAMP).exp()
        } else {
            logw.exp()
        }
    }

    /// Transmittance to the detector under the current parameters: the
    /// stored reference depth plus the extinction change over the stored
    /// lengths.
    #[inline]
    fn le_transmittance(&self, rec: &PathRecord, e: &LeEvent) -> f64 {
        let mut tau = e.tau;
        if let Some(db) = &self.dbeta {
            tau += rec
                .span_entries(e.span)
                .iter()
                .map(|x| db[x.voxel as usize] * x.length as f64)
                .sum::<f64>();
        }
        (-tau).exp()
    }

    /// Appends the weight of every local-estimation event of `rec` to `out`
    /// (in event order) and returns the number of clamped log-weights.
    /// Weights exclude the source prefactor and `1 / N`.
    pub fn event_weights(&self, rec: &PathRecord, out: &mut Vec<f64>) -> u32 {
        let mut clamps = 0;
        let le = &rec.le;
        let nv = rec.vertices.len();
        let mut logw = 0.0;
        let mut ei = 0;
        for b in 1..nv {
            if ei >= le.len() {
                break;
            }
            if let Some(db) = &self.dbeta {
                let dt: f64 = rec
                    .segment_entries(b - 1)
                    .iter()
                    .map(|x| db[x.voxel as usize] * x.length as f64)
                    .sum();
                logw -= dt;
            }
            let vx = &rec.vertices[b];
            match vx.kind {
                EventKind::Scatter => {
                    let v = vx.voxel as usize;
                    if ei < le.len() && le[ei].vertex as usize == b {
                        let pw = Self::weight(logw, &mut clamps);
                        let inv_beta_ref = 1.0 / self.r.beta_total(v);
                        while ei < le.len() && le[ei].vertex as usize == b {
                            let e = &le[ei];
                            let t_le = self.le_transmittance(rec, e);
                            out.push(pw * self.t.scattering_density(v, e.cos) * inv_beta_ref * t_le * e.geom);
                            ei += 1;
                        }
                    }
                    if b + 1 < nv {
                        let ratio = self.t.scattering_density(v, vx.cos) / self.r.vertex_density(v, vx.cos);
                        logw += ratio.ln();
                    }
                }
                EventKind::Reflect => {
                    let brdf = self.t.surfaces()[vx.surface as usize].brdf;
                    if ei < le.len() && le[ei].vertex as usize == b {
                        let pw = Self::weight(logw, &mut clamps);
                        while ei < le.len() && le[ei].vertex as usize == b {
                            let e = &le[ei];
                            let t_le = self.le_transmittance(rec, e);
                            out.push(pw * brdf.eval_dot(e.cos) * t_le * e.geom);
                            ei += 1;
                        }
                    }
                    if b + 1 < nv {
                        logw += (PI * brdf.eval_dot(vx.cos)).ln();
                    }
                }
                EventKind::Emission | EventKind::Escape => {}
            }
        }
        debug_assert_eq!(ei, le.len());
        clamps
    }
}

/// Exact per-pixel accumulator for forward estimates, optionally with
/// per-path second moments for standard errors.
#[derive(Debug, Clone)]
pub struct ForwardAccum {
    pub sum: ExactVec,
    pub sq: Option<ExactVec>,
    pub clamps: u64,
    pub events: u64,
    weights: Vec<f64>,
    per_pixel: Vec<(usize, f64)>,
}

impl ForwardAccum {
    pub fn new(pixels: usize, moments: bool) -> Self {
        ForwardAccum {
            sum: ExactVec::zeros(pixels),
            sq: moments.then(|| ExactVec::zeros(pixels)),
            clamps: 0,
            events: 0,
            weights: Vec::new(),
            per_pixel: Vec::new(),
        }
    }

    /// Adds all events of one path.
    pub fn add_path(&mut self, ev: &Evaluator, rec: &PathRecord) {
        self.weights.clear();
        self.clamps += ev.event_weights(rec, &mut self.weights) as u64;
        self.events += rec.le.len() as u64;
        let layout = ev.layout();
        if let Some(sq) = &mut self.sq {
            self.per_pixel.clear();
            for (e, &w) in rec.le.iter().zip(&self.weights) {
                let p = layout.pixel(e);
                self.sum.add(p, w);
                self.per_pixel.push((p, w));
            }
            self.per_pixel.sort_by_key(|x| x.0);
            let mut i = 0;
            while i < self.per_pixel.len() {
                let p = self.per_pixel[i].0;
                let mut s = 0.0;
                while i < self.per_pixel.len() && self.per_pixel[i].0 == p {
                    s += self.per_pixel[i].1;
                    i += 1;
                }
                sq.add(p, s * s);
            }
        } else {
            for (e, &w) in rec.le.iter().zip(&self.weights) {
                self.sum.add(layout.pixel(e), w);
            }
        }
    }

    pub fn merge(&mut self, o: &ForwardAccum) {
        self.sum.merge(&o.sum);
        if let (Some(a), Some(b)) = (&mut self.sq, &o.sq) {
            a.merge(b);
        }
        self.clamps += o.clamps;
        self.events += o.events;
    }

    /// Images (and standard errors when moments were kept) for `n` paths.
    pub fn finish(&self, layout: &PixelLayout, n: usize, prefactor: f64) -> (Vec<Image>, Option<Vec<Image>>) {
        let s = self.sum.values();
        let scale = prefactor / n as f64;
        let images = layout.split(&s, scale);
        let se = self.sq.as_ref().map(|sq| {
            let q = sq.values();
            let nf = n as f64;
            let se: Vec<f64> = s
                .iter()
                .zip(&q)
                .map(|(&s, &q)| {
                    if n < 2 {
                        return 0.0;
                    }
                    let var = ((q - s * s / nf) / (nf - 1.0)).max(0.0);
                    prefactor * (var / nf).sqrt()
                })
                .collect();
            layout.split(&se, 1.0)
        });
        (images, se)
    }
}
