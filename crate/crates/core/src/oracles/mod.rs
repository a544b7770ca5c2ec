//! Brute-force and quadrature references, kept apart from the estimators
//! they check.

use crate::accum::ExactSum;
use crate::geometry::Vec3;
use crate::gradient::SparseGradient;
use crate::image::Image;
use crate::parallel::{path_rng, resolve_workers, run_chunks};
use crate::scene::{pixel_bounds, LightSource, Scene};
use rand::Rng;
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    (1..=n)
        .map(|i| {
            let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                if n == 1 {
                    p0 = 1.0;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Integral of `f` over `[a, b]` with `rule` from [`gauss_legendre`].
pub fn gl_integrate<F: FnMut(f64) -> f64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    rule.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>() * h
}

/// Midpoint rule with `n` equal partitions of `[0, 1]`.
pub fn riemann_integrate<F: FnMut(f64) -> f64>(mut f: F, n: usize) -> f64 {
    assert!(n >= 1);
    let h = 1.0 / n as f64;
    (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Estimate and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

const MC_CHUNK: usize = 1 << 14;

fn mc_sum<G>(n: usize, seed: u64, workers: Option<usize>, g: G) -> McEstimate
where
    G: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    assert!(n >= 2);
    let states = run_chunks(
        resolve_workers(workers),
        n.div_ceil(MC_CHUNK),
        || (ExactSum::default(), ExactSum::default()),
        |(s, q), c| {
            for i in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(n) {
                let x = g(&mut path_rng(seed, i as u64));
                s.add(x);
                q.add(x * x);
            }
        },
    );
    let mut s = ExactSum::default();
    let mut q = ExactSum::default();
    for (a, b) in &states {
        s.merge(a);
        q.merge(b);
    }
    let nf = n as f64;
    let mean = s.value() / nf;
    let var = ((q.value() - nf * mean * mean) / (nf - 1.0)).max(0.0);
    McEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
    }
}

/// Plain Monte-Carlo estimate of `int_0^1 f` with uniform samples; sample
/// `i` uses stream `(seed, i)`.
pub fn mc_uniform<F: Fn(f64) -> f64 + Sync>(f: F, n: usize, seed: u64, workers: Option<usize>) -> McEstimate {
    mc_sum(n, seed, workers, |rng| f(rng.gen()))
}

/// Importance-sampled estimate of `int_0^1 f` with proposal density `pdf`
/// sampled by inverting `inv_cdf` on a uniform draw.
pub fn mc_importance<F, P, S>(f: F, pdf: P, inv_cdf: S, n: usize, seed: u64, workers: Option<usize>) -> McEstimate
where
    F: Fn(f64) -> f64 + Sync,
    P: Fn(f64) -> f64 + Sync,
    S: Fn(f64) -> f64 + Sync,
{
    mc_sum(n, seed, workers, |rng| {
        let u = inv_cdf(rng.gen());
        let p = pdf(u);
        let fu = f(u);
        if p > 0.0 {
            fu / p
        } else {
            assert!(fu == 0.0, "proposal density vanishes where the integrand does not");
            0.0
        }
    })
}

/// Voxel and extinction at `p`, with no tolerance at the grid boundary.
fn voxel_beta(scene: &Scene, p: Vec3) -> Option<(usize, f64)> {
    let g = scene.grid();
    let mut ijk = [0usize; 3];
    for a in 0..3 {
        let f = (p[a] - g.origin[a]) / g.voxel_size[a];
        if !(0.0..=g.dims[a] as f64).contains(&f) {
            return None;
        }
        ijk[a] = (f as usize).min(g.dims[a] - 1);
    }
    let v = g.index(ijk);
    Some((v, scene.beta_total(v)))
}

/// Optical depth of `x -> y` by Riemann summation with step `step`, each
/// step split by bisection until both ends share a voxel. Voxels are convex,
/// so this is exact for piecewise-constant extinction.
pub fn riemann_optical_depth(scene: &Scene, x: Vec3, y: Vec3, step: f64) -> f64 {
    let d = y - x;
    let len = d.length();
    if len == 0.0 {
        return 0.0;
    }
    let at = |t: f64| x + d * (t / len);
    let tol = 1e-13 * len.max(1.0);
    fn piece(scene: &Scene, at: &dyn Fn(f64) -> Vec3, a: f64, b: f64, tol: f64) -> f64 {
        let va = voxel_beta(scene, at(a));
        let vb = voxel_beta(scene, at(b));
        if va.map(|v| v.0) == vb.map(|v| v.0) {
            return va.map_or(0.0, |v| v.1) * (b - a);
        }
        if b - a <= tol {
            return voxel_beta(scene, at(0.5 * (a + b))).map_or(0.0, |v| v.1) * (b - a);
        }
        let m = 0.5 * (a + b);
        piece(scene, at, a, m, tol) + piece(scene, at, m, b, tol)
    }
    // outside the grid is not convex: clip first
    let Some((lo, hi)) = clip(scene, x, d / len, len) else {
        return 0.0;
    };
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let mut s = ExactSum::default();
    for i in 0..n {
        let a = lo + (hi - lo) * i as f64 / n as f64;
        let b = lo + (hi - lo) * (i + 1) as f64 / n as f64;
        s.add(piece(scene, &at, a, b, tol));
    }
    s.value()
}

/// Parameter interval of `origin + t dir`, `t in [0, t_max]`, inside the
/// grid bounds.
fn clip(scene: &Scene, origin: Vec3, dir: Vec3, t_max: f64) -> Option<(f64, f64)> {
    let b = scene.grid().bounds();
    let (mut t0, mut t1) = (0.0f64, t_max);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < b.min[a] || origin[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let ta = (b.min[a] - origin[a]) / dir[a];
        let tb = (b.max[a] - origin[a]) / dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t1 > t0).then_some((t0, t1))
}

/// Parameters along `origin + t dir` where the ray crosses voxel planes,
/// clipped to the grid, sorted. Consecutive pairs bound single-voxel pieces.
fn plane_crossings(scene: &Scene, origin: Vec3, dir: Vec3) -> Vec<f64> {
    let g = scene.grid();
    let Some((t0, t1)) = clip(scene, origin, dir, f64::INFINITY) else {
        return vec![];
    };
    let mut ts = vec![t0, t1];
    for a in 0..3 {
        if dir[a] == 0.0 {
            continue;
        }
        for k in 1..g.dims[a] {
            let plane = g.origin[a] + k as f64 * g.voxel_size[a];
            let t = (plane - origin[a]) / dir[a];
            if t > t0 && t < t1 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup();
    ts
}

fn min_voxel(scene: &Scene) -> f64 {
    let s = scene.grid().voxel_size;
    s.x.min(s.y).min(s.z)
}

/// Light arriving at `y` from the source along `w_in`, attenuated:
/// `(radiance, propagation direction)`. Zero for sun rays that would have
/// entered through a side face.
fn source_term(scene: &Scene, y: Vec3) -> (f64, Vec3) {
    match *scene.light() {
        LightSource::DirectionalSun { direction, radiance } => {
            let b = scene.bounds();
            let s = (b.max.z - y.z) / -direction.z;
            let top = y - direction * s;
            if top.x < b.min.x || top.x > b.max.x || top.y < b.min.y || top.y > b.max.y {
                return (0.0, direction);
            }
            let step = min_voxel(scene);
            (radiance * (-riemann_optical_depth(scene, top, y, step)).exp(), direction)
        }
        LightSource::IsotropicPoint { position, radiance } => {
            let d = y - position;
            let r2 = d.length_squared();
            let step = min_voxel(scene);
            let t = (-riemann_optical_depth(scene, position, y, step)).exp();
            (radiance * t / r2, d / r2.sqrt())
        }
    }
}

/// Singly scattered radiance reaching `origin` from direction `-dir` (the
/// line of sight points along unit `dir`), by Gauss-Legendre quadrature of
/// `order` nodes per voxel piece. Surfaces are ignored.
pub fn single_scatter_radiance(scene: &Scene, origin: Vec3, dir: Vec3, order: usize) -> f64 {
    let rule = gauss_legendre(order);
    let ts = plane_crossings(scene, origin, dir);
    let mut depth = 0.0;
    let mut total = 0.0;
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let Some((v, beta)) = voxel_beta(scene, origin + dir * (0.5 * (a + b))) else {
            continue;
        };
        if scene.beta_scat(v) > 0.0 {
            total += gl_integrate(&rule, a, b, |t| {
                let y = origin + dir * t;
                let (src, w_in) = source_term(scene, y);
                if src == 0.0 {
                    return 0.0;
                }
                let t_le = (-(depth + beta * (t - a))).exp();
                src * scene.scattering_density(v, -w_in.dot(dir)) * t_le
            });
        }
        depth += beta * (b - a);
    }
    total
}

/// Single-scattering image of detector `d`: the radiance line integral
/// integrated over each pixel's solid angle with a `pixel_order`^2
/// Gauss-Legendre rule. Pure and seed-independent.
pub fn single_scatter_image(scene: &Scene, d: usize, line_order: usize, pixel_order: usize) -> Image {
    let det = &scene.detectors()[d];
    let frame = det.frame();
    let rule = gauss_legendre(pixel_order);
    let n = det.pixel_count();
    let values = crate::parallel::map_chunks(resolve_workers(None), n, |p| {
        let (u0, u1, v0, v1) = pixel_bounds(p, det.rows, det.cols);
        gl_integrate(&rule, v0, v1, |v| {
            gl_integrate(&rule, u0, u1, |u| {
                let dir = frame.direction(u, v).normalized();
                frame.solid_angle_density(u, v) * single_scatter_radiance(scene, det.position, dir, line_order)
            })
        })
    });
    Image::from_data(det.rows, det.cols, values)
}

/// Central finite differences of `eval` at `params` for each index in
/// `indices`, with step `h(m_v)`.
pub fn finite_difference_grad<E, H>(mut eval: E, params: &[f64], indices: &[usize], h: H) -> SparseGradient
where
    E: FnMut(&[f64]) -> f64,
    H: Fn(f64) -> f64,
{
    let mut g = SparseGradient::default();
    let mut x = params.to_vec();
    for &v in indices {
        let step = h(params[v]);
        x[v] = params[v] + step;
        let fp = eval(&x);
        x[v] = params[v] - step;
        let fm = eval(&x);
        x[v] = params[v];
        g.add(v, (fp - fm) / (2.0 * step));
    }
    g
}

/// The default step rule `1e-4 (1 + |m|)`.
pub fn default_step(m: f64) -> f64 {
    1e-4 * (1.0 + m.abs())
}
