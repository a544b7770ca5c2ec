use super::estimator::{source_prefactor, Evaluator, ForwardAccum};
use super::record::PathRecord;
use super::trace::{TraceOptions, Tracer};
use crate::image::Image;
use crate::parallel::{path_rng, resolve_workers, run_chunks};
use crate::pathstore::PathStore;
use crate::scene::Scene;

/// Paths per work unit. Fixed, so chunk contents never depend on the
/// worker count.
pub const PATH_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct RenderOptions {
    pub trace: TraceOptions,
    /// `None`: `PATHREC_WORKERS`, then all cores.
    pub workers: Option<usize>,
    /// Return the sampled paths as a [`PathStore`].
    pub keep_store: bool,
    /// Also estimate per-pixel standard errors.
    pub moments: bool,
}


#[derive(Debug)]
pub struct RenderOutput {
    pub images: Vec<Image>,
    pub std_error: Option<Vec<Image>>,
    pub store: Option<PathStore>,
    pub n_paths: usize,
    /// Local-estimation events scored.
    pub events: u64,
    /// Clamped log-weights.
    pub clamped: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("path count must be at least 1")]
    NoPaths,
}

pub(crate) fn chunk_count(n: usize) -> usize {
    n.div_ceil(PATH_CHUNK)
}

/// Traces `n_paths` paths from the light and estimates every detector image.
/// Path `i` uses the random stream `(seed, i)`; the result is bit-identical
/// for any worker count.
pub fn render(scene: &Scene, n_paths: usize, seed: u64, options: RenderOptions) -> Result<RenderOutput, RenderError> {
    if n_paths == 0 {
        return Err(RenderError::NoPaths);
    }
    let tracer = Tracer::new(scene, options.trace);
    let ev = Evaluator::new(scene, scene).expect("a scene is compatible with itself");
    let pixels = ev.layout().total();
    let workers = resolve_workers(options.workers);
    let states = run_chunks(
        workers,
        chunk_count(n_paths),
        || (ForwardAccum::new(pixels, options.moments), Vec::<(usize, Vec<PathRecord>)>::new()),
        |(acc, kept), c| {
            let lo = c * PATH_CHUNK;
            let hi = (lo + PATH_CHUNK).min(n_paths);
            let mut recs = Vec::new();
            for i in lo..hi {
                let mut rng = path_rng(seed, i as u64);
                let rec = tracer.trace(&mut rng, i as u64);
                acc.add_path(&ev, &rec);
                if options.keep_store {
                    recs.push(rec);
                }
            }
            if options.keep_store {
                kept.push((c, recs));
            }
        },
    );
    let mut total = ForwardAccum::new(pixels, options.moments);
    let mut kept = Vec::new();
    for (acc, k) in states {
        total.merge(&acc);
        kept.extend(k);
    }
    let (images, std_error) = total.finish(ev.layout(), n_paths, source_prefactor(scene));
    let store = options.keep_store.then(|| {
        kept.sort_by_key(|x| x.0);
        let records: Vec<PathRecord> = kept.into_iter().flat_map(|x| x.1).collect();
        PathStore::new(records, 0, scene.fingerprint())
    });
    Ok(RenderOutput {
        images,
        std_error,
        store,
        n_paths,
        events: total.events,
        clamped: total.clamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scene::presets::{camera_ring, cube_grid, nadir_camera, single_species, zenith_sun};
    use crate::scene::{LengthUnit, LightSource, PhaseFunction};

    fn scene(values: Vec<f64>, n: usize) -> Scene {
        let g = cube_grid(1.0, [n; 3]);
        let mut dets = camera_ring(&g, 2.5, 1.0, 3, 6, 6, 0.8);
        dets.push(nadir_camera(&g, 2.0, 8, 8, 0.7));
        Scene::new(single_species(
            g,
            LengthUnit::M,
            values,
            0.9,
            PhaseFunction::HenyeyGreenstein { g: 0.6 },
            zenith_sun(1.0),
            dets,
        ))
        .unwrap()
    }

    fn hetero() -> Scene {
        scene((0..27).map(|i| 0.5 + (i % 7) as f64 * 0.6).collect(), 3)
    }

    #[test]
    fn vacuum_renders_black_and_zero_paths_fail() {
        let s = scene(vec![0.0; 8], 2);
        let out = render(&s, 5000, 1, RenderOptions::default()).unwrap();
        assert!(out.images.iter().all(|im| im.data.iter().all(|&x| x == 0.0)));
        assert_eq!(out.events, 0);
        assert!(matches!(render(&s, 0, 1, RenderOptions::default()), Err(RenderError::NoPaths)));
    }

    #[test]
    fn bit_identical_across_worker_counts() {
        let s = hetero();
        let run = |w| {
            render(
                &s,
                3 * PATH_CHUNK + 17,
                42,
                RenderOptions {
                    workers: Some(w),
                    keep_store: true,
                    moments: true,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let a = run(1);
        for w in [2, 3, 8] {
            let b = run(w);
            assert_eq!(a.images, b.images);
            assert_eq!(a.std_error, b.std_error);
            assert_eq!(a.store, b.store);
        }
        let store = a.store.unwrap();
        assert_eq!(store.len(), 3 * PATH_CHUNK + 17);
        assert!(store.records().iter().enumerate().all(|(i, r)| r.path_index == i as u64));
        assert!(a.images.iter().all(|im| im.sum() > 0.0));
    }

    #[test]
    fn point_light_renders() {
        let g = cube_grid(1.0, [2; 3]);
        let s = Scene::new(single_species(
            g,
            LengthUnit::M,
            vec![1.0; 8],
            0.9,
            PhaseFunction::isotropic(),
            LightSource::IsotropicPoint {
                position: Vec3::new(0.5, 0.5, 0.5),
                radiance: 1.0,
            },
            vec![nadir_camera(&g, 2.0, 4, 4, 0.7)],
        ))
        .unwrap();
        let out = render(&s, 20_000, 3, RenderOptions::default()).unwrap();
        assert!(out.images[0].sum() > 0.0);
    }

    /// Standard deviation over repeated renders shrinks as `1 / sqrt(N)`.
    #[test]
    fn error_follows_inverse_square_root_law() {
        let s = scene(vec![2.0; 8], 2);
        let reps = 200;
        let std_of = |n: usize, base: u64| {
            let xs: Vec<f64> = (0..reps)
                .map(|k| {
                    render(&s, n, base + k, RenderOptions::default()).unwrap().images[3].sum()
                })
                .collect();
            let m = xs.iter().sum::<f64>() / reps as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt()
        };
        let a = std_of(500, 1000);
        let b = std_of(1000, 5000);
        let ratio = a / b;
        let expected = 2f64.sqrt();
        assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}
