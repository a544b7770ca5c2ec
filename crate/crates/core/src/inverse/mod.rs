//! Loss, ADAM, space carving and the recycling reconstruction loop.

use crate::gradient::{residuals, weighted_gradient, GradientError, GradientOptions, Problem};
use crate::image::{check_shapes, Image, ImageError};
use crate::pathstore::{recycled_render, PathStore, RecycleOptions, StoreError};
use crate::scene::{pixel_index, Detector, GridGeometry, Scene};
use crate::transport::{render, RenderError, RenderOptions, TraceOptions};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum InverseError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("non-finite loss {loss} at iteration {iter}")]
    NonFinite { iter: usize, loss: f64 },
    #[error("{0}")]
    Config(String),
}

/// Half the squared L2 distance between image sets.
pub fn loss(forward: &[Image], gt: &[Image]) -> Result<f64, ImageError> {
    Ok(0.5 * residuals(forward, gt)?.iter().map(|r| r * r).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Clamp the parameters to their bounds after every step.
    pub project: bool,
    /// Per-unknown multipliers on `step_size`; empty means all ones.
    pub scales: Vec<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e7,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            project: true,
            scales: Vec::new(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), InverseError> {
        let decay = 0.0..1.0;
        if !(self.step_size > 0.0) || !decay.contains(&self.beta1) || !decay.contains(&self.beta2) {
            return Err(InverseError::Config(format!(
                "bad ADAM settings: step {} decays {} {}",
                self.step_size, self.beta1, self.beta2
            )));
        }
        if self.scales.iter().any(|s| !(*s >= 0.0)) {
            return Err(InverseError::Config("step scales must be >= 0".into()));
        }
        Ok(())
    }
}

/// Box constraints of the unknowns.
pub fn bounds(problem: Problem, n: usize) -> Vec<(f64, f64)> {
    match problem {
        Problem::Tomography { .. } => vec![(0.0, f64::INFINITY); n],
        Problem::Reflectometry { .. } => vec![(0.0, 1.0), (0.0, f64::INFINITY)],
    }
}

#[derive(Debug, Clone)]
pub struct OptState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub bounds: Vec<(f64, f64)>,
    /// Sampling phase that produced the current store.
    pub generation: u64,
    pub reference: Option<Vec<f64>>,
    pub losses: Vec<f64>,
}

impl OptState {
    pub fn new(params: Vec<f64>, bounds: Vec<(f64, f64)>) -> Self {
        assert_eq!(params.len(), bounds.len());
        let n = params.len();
        OptState {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            bounds,
            generation: 0,
            reference: None,
            losses: Vec::new(),
        }
    }
}

/// One bias-corrected ADAM step followed by projection onto the bounds.
pub fn adam_step(state: &mut OptState, grad: &[f64], cfg: &AdamConfig) {
    assert_eq!(grad.len(), state.params.len(), "gradient dimension");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    for i in 0..grad.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        let scale = cfg.scales.get(i).copied().unwrap_or(1.0);
        let mut x = state.params[i] - cfg.step_size * scale * mh / (vh.sqrt() + cfg.epsilon);
        if cfg.project {
            let (lo, hi) = state.bounds[i];
            x = x.clamp(lo, hi);
        }
        state.params[i] = x;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub rows: usize,
    pub cols: usize,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Iterations between path-sampling phases.
    pub recycle_period: usize,
    pub stages: Vec<Stage>,
    /// Saturation window in iterations.
    pub window: usize,
    /// Relative loss improvement over `window` below which a stage is saturated.
    pub min_improvement: f64,
    /// Optional hard limit on iterations per stage (the last stage is exempt).
    pub stage_cap: Option<usize>,
    pub max_iters: usize,
}

impl Schedule {
    pub fn new(recycle_period: usize, stages: Vec<Stage>, max_iters: usize) -> Self {
        Schedule {
            recycle_period,
            stages,
            window: 20,
            min_improvement: 0.01,
            stage_cap: None,
            max_iters,
        }
    }

    pub fn validate(&self, gt: &[Image]) -> Result<(), InverseError> {
        if self.recycle_period == 0 || self.stages.is_empty() || self.window == 0 {
            return Err(InverseError::Config("need N_r >= 1, a saturation window and at least one stage".into()));
        }
        for w in self.stages.windows(2) {
            if w[1].rows < w[0].rows || w[1].cols < w[0].cols || w[1].paths < w[0].paths {
                return Err(InverseError::Config("stage resolutions and path counts must not decrease".into()));
            }
        }
        for s in &self.stages {
            if s.paths == 0 {
                return Err(InverseError::Config("stage with zero paths".into()));
            }
            for im in gt {
                im.block_sum(s.rows, s.cols)?;
            }
        }
        Ok(())
    }

    fn saturated(&self, losses: &[f64]) -> bool {
        let n = losses.len();
        if n <= self.window {
            return false;
        }
        let (old, new) = (losses[n - 1 - self.window], losses[n - 1]);
        old <= 0.0 || (old - new) / old < self.min_improvement
    }
}

/// Relative L1 error and relative mass bias of `est` against `truth`.
pub fn metrics(est: &[f64], truth: &[f64]) -> Result<(f64, f64), InverseError> {
    if est.len() != truth.len() {
        return Err(InverseError::Config(format!("length mismatch: {} vs {}", est.len(), truth.len())));
    }
    let norm: f64 = truth.iter().map(|x| x.abs()).sum();
    if norm == 0.0 {
        return Err(InverseError::Config("true field has zero L1 norm".into()));
    }
    let diff: f64 = est.iter().zip(truth).map(|(a, b)| (b - a).abs()).sum();
    let mass: f64 = est.iter().map(|x| x.abs()).sum();
    Ok((diff / norm, (norm - mass) / norm))
}

/// Marks voxels whose centre projects to a pixel brighter than
/// `threshold * max` in every view that sees it. Views that do not see a
/// voxel do not carve it. Occupied voxels start at `mean`.
pub fn space_carve(
    gt: &[Image],
    detectors: &[Detector],
    grid: &GridGeometry,
    threshold: f64,
    mean: f64,
) -> Result<(Vec<bool>, Vec<f64>), InverseError> {
    if detectors.len() < 2 || gt.len() != detectors.len() {
        return Err(InverseError::Config(format!(
            "space carving needs >= 2 views with one image each ({} views, {} images)",
            detectors.len(),
            gt.len()
        )));
    }
    let frames: Vec<_> = detectors.iter().map(|d| d.frame()).collect();
    let maxes: Vec<f64> = gt.iter().map(|im| im.max()).collect();
    let mask: Vec<bool> = (0..grid.voxel_count())
        .map(|v| {
            let c = grid.voxel_center(v);
            let mut seen = false;
            for ((d, f), (im, &mx)) in detectors.iter().zip(&frames).zip(gt.iter().zip(&maxes)) {
                if let Some((u, w)) = f.project(d.position, c) {
                    seen = true;
                    if !(im.data[pixel_index(u, w, im.rows, im.cols)] > threshold * mx) {
                        return false;
                    }
                }
            }
            seen
        })
        .collect();
    let init = mask.iter().map(|&m| if m { mean } else { 0.0 }).collect();
    Ok((mask, init))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sampling phase `phase`.
pub fn phase_seed(seed: u64, phase: u64) -> u64 {
    splitmix64(seed ^ phase)
}

/// Ground truth for synthetic runs: four times the optimisation path count
/// under a seed unrelated to any optimisation phase.
pub fn render_ground_truth(
    scene: &Scene,
    paths: usize,
    seed: u64,
    options: RenderOptions,
) -> Result<Vec<Image>, InverseError> {
    let opts = RenderOptions {
        keep_store: false,
        moments: false,
        ..options
    };
    Ok(render(scene, 4 * paths, splitmix64(!seed), opts)?.images)
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub problem: Problem,
    pub workers: Option<usize>,
    pub trace: TraceOptions,
    pub sort: bool,
    /// True parameters, for the error columns of the history.
    pub truth: Option<Vec<f64>>,
    /// Unknowns marked false keep their initial value.
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRow {
    pub iter: usize,
    pub time_s: f64,
    pub loss: f64,
    pub eps: f64,
    pub delta: f64,
    pub stage: usize,
    /// Sampling phase of the store used.
    pub phase: u64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub params: Vec<f64>,
    pub history: Vec<IterRow>,
    /// Number of path-sampling phases.
    pub phases: u64,
    /// Last iteration of every completed stage.
    pub stage_ends: Vec<usize>,
}

/// Runs [`reconstruct_with`] without an observer.
pub fn reconstruct(
    scene0: &Scene,
    gt: &[Image],
    adam: &AdamConfig,
    schedule: &Schedule,
    seed: u64,
    opts: &ReconstructOptions,
) -> Result<Reconstruction, InverseError> {
    reconstruct_with(scene0, gt, adam, schedule, seed, opts, |_, _| {})
}

/// Gradient descent with path recycling. Paths are resampled under the
/// current parameters every `recycle_period` iterations and re-weighted in
/// between. `observe` sees every history row with the parameters it was
/// computed at.
pub fn reconstruct_with<F: FnMut(&IterRow, &[f64])>(
    scene0: &Scene,
    gt: &[Image],
    adam: &AdamConfig,
    schedule: &Schedule,
    seed: u64,
    opts: &ReconstructOptions,
    mut observe: F,
) -> Result<Reconstruction, InverseError> {
    adam.validate()?;
    schedule.validate(gt)?;
    let problem = opts.problem;
    let x0 = problem.values(scene0)?;
    let full: Vec<Image> = scene0.detectors().iter().map(|d| Image::zeros(d.rows, d.cols)).collect();
    check_shapes(&full, gt)?;
    if let Some(t) = &opts.truth {
        if t.len() != x0.len() {
            return Err(InverseError::Config("truth has the wrong number of unknowns".into()));
        }
    }
    if opts.mask.as_ref().is_some_and(|m| m.len() != x0.len()) {
        return Err(InverseError::Config("mask has the wrong number of unknowns".into()));
    }

    let stage_inputs = |k: usize| -> Result<(Scene, Vec<Image>), InverseError> {
        let s = schedule.stages[k];
        let g = gt.iter().map(|im| im.block_sum(s.rows, s.cols)).collect::<Result<_, _>>()?;
        Ok((scene0.with_detector_resolution(s.rows, s.cols), g))
    };
    let mut stage = 0;
    let (mut stage_scene, mut stage_gt) = stage_inputs(0)?;
    let mut stage_losses: Vec<f64> = Vec::new();
    let mut stage_ends = Vec::new();

    let mut state = OptState::new(x0.clone(), bounds(problem, x0.len()));
    let mut store: Option<(PathStore, Scene)> = None;
    let mut phases = 0u64;
    let mut history = Vec::with_capacity(schedule.max_iters);
    let start = Instant::now();
    let gopts = GradientOptions { workers: opts.workers };

    for it in 0..schedule.max_iters {
        let cur = problem.apply(&stage_scene, &state.params)?;
        let forward = if it % schedule.recycle_period == 0 {
            let out = render(
                &cur,
                schedule.stages[stage].paths,
                phase_seed(seed, phases),
                RenderOptions {
                    trace: opts.trace,
                    workers: opts.workers,
                    keep_store: true,
                    moments: false,
                },
            )?;
            let mut st = out.store.expect("store requested");
            if opts.sort {
                st.sort_by_size(false);
            }
            state.generation = phases;
            state.reference = Some(state.params.clone());
            phases += 1;
            store = Some((st, cur.clone()));
            out.images
        } else {
            let (st, r) = store.as_ref().expect("sampled at iteration 0");
            recycled_render(st, &cur, r, RecycleOptions { workers: opts.workers, moments: false })?.images
        };
        let (st, r) = store.as_ref().expect("sampled at iteration 0");
        let res = residuals(&forward, &stage_gt)?;
        let l = 0.5 * res.iter().map(|x| x * x).sum::<f64>();
        if !l.is_finite() {
            return Err(InverseError::NonFinite { iter: it, loss: l });
        }
        let mut grad = weighted_gradient(st, &cur, r, problem, &res, gopts)?;
        if let Some(m) = &opts.mask {
            grad.iter_mut().zip(m).filter(|(_, &keep)| !keep).for_each(|(g, _)| *g = 0.0);
        }
        let (eps, delta) = match &opts.truth {
            Some(t) => metrics(&state.params, t)?,
            None => (f64::NAN, f64::NAN),
        };
        let row = IterRow {
            iter: it,
            time_s: start.elapsed().as_secs_f64(),
            loss: l,
            eps,
            delta,
            stage,
            phase: state.generation,
        };
        observe(&row, &state.params);
        history.push(row);
        state.losses.push(l);
        stage_losses.push(l);
        adam_step(&mut state, &grad, adam);

        let capped = schedule.stage_cap.is_some_and(|c| stage_losses.len() >= c);
        if stage + 1 < schedule.stages.len() && (capped || schedule.saturated(&stage_losses)) {
            stage_ends.push(it);
            stage += 1;
            (stage_scene, stage_gt) = stage_inputs(stage)?;
            stage_losses.clear();
            let s = schedule.stages[stage];
            if let Some((_, r)) = store.as_mut() {
                *r = r.with_detector_resolution(s.rows, s.cols);
            }
        }
    }
    Ok(Reconstruction {
        params: state.params,
        history,
        phases,
        stage_ends,
    })
}
