//! Stored light paths, reused across optimization iterations.

pub mod io;

pub use io::{load, save, StoreIoError, MAGIC, VERSION};

use crate::accum::ExactVec;
use crate::geometry::{Ray, Vec3};
use crate::parallel::{resolve_workers, run_chunks};
use crate::scene::{GridGeometry, Scene};
use crate::transport::{
    chunk_count, source_prefactor, traverse, Evaluator, EventKind, ForwardAccum, PathRecord, RenderOutput,
    SegmentIntersections, PATH_CHUNK,
};

/// Paths sampled under one reference parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStore {
    records: Vec<PathRecord>,
    sorted: bool,
    generation: u64,
    ref_fingerprint: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct StoreStats {
    pub paths: usize,
    pub segments: usize,
    pub entries: usize,
    pub events: usize,
    pub truncated: usize,
    pub max_size: usize,
    /// Heap bytes held by the records.
    pub bytes: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store was sampled under different reference parameters")]
    ReferenceMismatch,
    #[error("parameter sets are incompatible: {0}")]
    Incompatible(String),
    #[error("store is empty")]
    Empty,
}

impl PathStore {
    pub fn new(records: Vec<PathRecord>, generation: u64, ref_fingerprint: u64) -> Self {
        PathStore {
            records,
            sorted: false,
            generation,
            ref_fingerprint,
        }
    }

    pub fn records(&self) -> &[PathRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    /// Iteration at which the paths were sampled.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Fingerprint of the reference scene.
    pub fn reference(&self) -> u64 {
        self.ref_fingerprint
    }

    /// Stable sort by path size. With `by_first_voxel`, ties are broken by
    /// the voxel of the first scatter vertex.
    pub fn sort_by_size(&mut self, by_first_voxel: bool) {
        if by_first_voxel {
            self.records.sort_by_key(|r| (r.size(), first_scatter_voxel(r)));
        } else {
            self.records.sort_by_key(|r| r.size());
        }
        self.sorted = true;
    }

    pub fn stats(&self) -> StoreStats {
        let mut s = StoreStats {
            paths: self.records.len(),
            bytes: self.records.capacity() * std::mem::size_of::<PathRecord>(),
            ..Default::default()
        };
        for r in &self.records {
            s.segments += r.size();
            s.entries += r.entries.len();
            s.events += r.le.len();
            s.truncated += r.truncated as usize;
            s.max_size = s.max_size.max(r.size());
            s.bytes += r.heap_bytes();
        }
        s
    }

    pub(crate) fn from_parts(records: Vec<PathRecord>, sorted: bool, generation: u64, ref_fingerprint: u64) -> Self {
        PathStore {
            records,
            sorted,
            generation,
            ref_fingerprint,
        }
    }
}

fn first_scatter_voxel(r: &PathRecord) -> u32 {
    r.vertices
        .iter()
        .find(|v| v.kind == EventKind::Scatter)
        .map_or(u32::MAX, |v| v.voxel)
}

/// Log of the recycling correction factor over segments
/// `seg_start..seg_end`, each with the vertex that sampled its direction.
/// Returns `-inf` when the path is impossible under `t`.
pub fn log_correction_range(rec: &PathRecord, t: &Scene, r: &Scene, seg_start: usize, seg_end: usize) -> f64 {
    let bt = t.beta_total_table();
    let br = r.beta_total_table();
    let mut s = 0.0;
    for b in seg_start..seg_end {
        s -= rec
            .segment_entries(b)
            .iter()
            .map(|e| (bt[e.voxel as usize] - br[e.voxel as usize]) * e.length as f64)
            .sum::<f64>();
        if b > 0 {
            let v = &rec.vertices[b];
            if v.kind == EventKind::Scatter {
                let vox = v.voxel as usize;
                let dr = r.vertex_density(vox, v.cos);
                assert!(dr > 0.0, "stored scatter vertex has zero density under the reference");
                s += (t.vertex_density(vox, v.cos) / dr).ln();
            }
        }
    }
    s
}

/// `mu(path | t) / mu(path | r)` for a path sampled under `r`.
pub fn correction_factor(rec: &PathRecord, t: &Scene, r: &Scene) -> f64 {
    log_correction_range(rec, t, r, 0, rec.size()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecycleOptions {
    pub workers: Option<usize>,
    pub moments: bool,
}

/// Estimates the images under `t` from paths sampled under `r`, without
/// casting any rays.
pub fn recycled_render(
    store: &PathStore,
    t: &Scene,
    r: &Scene,
    options: RecycleOptions,
) -> Result<RenderOutput, StoreError> {
    if store.ref_fingerprint != r.fingerprint() {
        return Err(StoreError::ReferenceMismatch);
    }
    if store.is_empty() {
        return Err(StoreError::Empty);
    }
    let ev = Evaluator::new(t, r).map_err(|e| StoreError::Incompatible(e.to_string()))?;
    let pixels = ev.layout().total();
    let n = store.len();
    let states = run_chunks(
        resolve_workers(options.workers),
        chunk_count(n),
        || ForwardAccum::new(pixels, options.moments),
        |acc, c| {
            let lo = c * PATH_CHUNK;
            for rec in &store.records[lo..(lo + PATH_CHUNK).min(n)] {
                acc.add_path(&ev, rec);
            }
        },
    );
    let mut total = ForwardAccum::new(pixels, options.moments);
    for s in &states {
        total.merge(s);
    }
    let (images, std_error) = total.finish(ev.layout(), n, source_prefactor(t));
    Ok(RenderOutput {
        images,
        std_error,
        store: None,
        n_paths: n,
        events: total.events,
        clamped: total.clamps,
    })
}

/// Unrounded per-pixel event-weight sums of the recycled estimate and the
/// factor that turns them into pixel values. Differences of these sums are
/// exact, which finite-difference checks rely on.
pub fn recycled_sums(
    store: &PathStore,
    t: &Scene,
    r: &Scene,
    workers: Option<usize>,
) -> Result<(ExactVec, f64), StoreError> {
    if store.ref_fingerprint != r.fingerprint() {
        return Err(StoreError::ReferenceMismatch);
    }
    if store.is_empty() {
        return Err(StoreError::Empty);
    }
    let ev = Evaluator::new(t, r).map_err(|e| StoreError::Incompatible(e.to_string()))?;
    let pixels = ev.layout().total();
    let n = store.len();
    let states = run_chunks(
        resolve_workers(workers),
        chunk_count(n),
        || ForwardAccum::new(pixels, false),
        |acc, c| {
            let lo = c * PATH_CHUNK;
            for rec in &store.records[lo..(lo + PATH_CHUNK).min(n)] {
                acc.add_path(&ev, rec);
            }
        },
    );
    let mut total = ExactVec::zeros(pixels);
    for s in &states {
        total.merge(&s.sum);
    }
    Ok((total, source_prefactor(t) / n as f64))
}

/// Recomputes the voxel intersections of every segment of `rec`.
pub fn segment_lengths(rec: &PathRecord, grid: &GridGeometry) -> Vec<SegmentIntersections> {
    (0..rec.size())
        .map(|b| {
            let a = rec.vertices[b].position;
            let d: Vec3 = rec.vertices[b + 1].position - a;
            let len = d.length();
            if len == 0.0 {
                SegmentIntersections::default()
            } else {
                traverse(grid, &Ray::new(a, d), len)
            }
        })
        .collect()
}
