//! Command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration and I/O errors, 3 when a
//! numeric failure aborts the run.

pub mod formats;

use crate::gradient::{GradientError, Problem};
use crate::image::Image;
use crate::inverse::{
    metrics, reconstruct_with, space_carve, AdamConfig, InverseError, IterRow, ReconstructOptions, Schedule, Stage,
};
use crate::oracles::{gauss_legendre, gl_integrate, riemann_optical_depth};
use crate::parallel::resolve_workers;
use crate::pathstore::io as store_io;
use crate::scene::presets::{cube_grid, nadir_camera, single_species, zenith_sun};
use crate::scene::{LengthUnit, PhaseFunction, Scene, VoxelGridField};
use crate::transport::{optical_depth, render, RenderOptions, TraceOptions, DEFAULT_MAX_BOUNCES};
use clap::{Args, Parser, Subcommand};
use formats::{
    append_text, load_grid, load_pfm, load_scene, loss_csv, save_grid, save_pfm, save_pgm, write_text, FormatError,
};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<InverseError> for CliError {
    fn from(e: InverseError) -> Self {
        match e {
            InverseError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "pathrec", version, about = "Monte-Carlo path tracing with path recycling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render every detector of a scene.
    Render(RenderArgs),
    /// Recover a species' extinction grid from detector images.
    Reconstruct(ReconstructArgs),
    /// Recover Phong parameters of one surface from detector images.
    Reflectometry(ReflectometryArgs),
    /// Relative L1 error and mass bias of an estimated grid.
    Metrics(MetricsArgs),
    /// Quick numerical self-checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; falls back to PATHREC_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_MAX_BOUNCES)]
    max_bounces: usize,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    paths: usize,
    #[command(flatten)]
    common: Common,
    /// Also write per-pixel standard errors.
    #[arg(long)]
    moments: bool,
    /// Also write tone-mapped 8-bit PGM previews.
    #[arg(long)]
    preview: bool,
    /// Save the sampled paths to this file.
    #[arg(long)]
    store_dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimArgs {
    /// Directory holding det<k>.pfm for every detector.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Paths per sampling phase when --stages is not given.
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Iterations between path-sampling phases.
    #[arg(long, default_value_t = 30)]
    recycle_period: usize,
    /// Coarse-to-fine stages as ROWSxCOLS:PATHS, comma separated.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long)]
    alpha: f64,
    /// ADAM denominator guard; keep it well below typical gradient magnitudes.
    #[arg(long, default_value_t = 1e-8)]
    adam_epsilon: f64,
    /// Iterations after which a stage ends even if not saturated.
    #[arg(long)]
    stage_cap: Option<usize>,
    /// Write a checkpoint every K iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Keep stored paths in sampling order.
    #[arg(long)]
    no_sort: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Initial scene; the unknown species' current values are the start point.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    species: usize,
    /// Use 1/beta at scatter vertices in place of the albedo-weighted phase ratio.
    #[arg(long)]
    compat: bool,
    /// True grid, for the error columns of the log.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Initialise by space carving with this fraction of each view's maximum;
    /// voxels outside the carved hull stay fixed.
    #[arg(long)]
    carve: Option<f64>,
    /// Extinction given to carved-in voxels.
    #[arg(long, requires = "carve")]
    init_mean: Option<f64>,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ReflectometryArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    surface: usize,
    /// Start point KAPPA,GAMMA; defaults to the scene's values.
    #[arg(long)]
    init: Option<String>,
    /// True KAPPA,GAMMA, for the error columns of the log.
    #[arg(long)]
    truth: Option<String>,
    /// Step multipliers for kappa and gamma.
    #[arg(long, default_value = "1,100")]
    scales: String,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "true")]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let echo: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = match cli.command {
        Command::Render(a) => cmd_render(a, &echo),
        Command::Reconstruct(a) => cmd_reconstruct(a, &echo),
        Command::Reflectometry(a) => cmd_reflectometry(a, &echo),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
}

fn write_manifest(c: &Common, argv: &[String], extra: serde_json::Value) -> Result<(), CliError> {
    let m = json!({
        "argv": argv,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": c.seed,
        "workers": resolve_workers(c.workers),
        "max_bounces": c.max_bounces,
        "details": extra,
    });
    write_text(&c.out.join("manifest.json"), &serde_json::to_string_pretty(&m).unwrap())?;
    Ok(())
}

fn open_scene(path: &Path) -> Result<Scene, CliError> {
    Scene::new(load_scene(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn emit_images(dir: &Path, suffix: &str, images: &[Image], preview: bool) -> Result<(), CliError> {
    for (k, im) in images.iter().enumerate() {
        save_pfm(&dir.join(format!("det{k}{suffix}.pfm")), im)?;
        if preview {
            save_pgm(&dir.join(format!("det{k}{suffix}.pgm")), im)?;
        }
    }
    Ok(())
}

fn cmd_render(a: RenderArgs, argv: &[String]) -> Result<(), CliError> {
    let scene = open_scene(&a.scene)?;
    prepare_out(&a.common.out)?;
    let out = render(
        &scene,
        a.paths,
        a.common.seed,
        RenderOptions {
            trace: TraceOptions {
                max_bounces: a.common.max_bounces,
            },
            workers: a.common.workers,
            keep_store: a.store_dump.is_some(),
            moments: a.moments,
        },
    )
    .map_err(config)?;
    emit_images(&a.common.out, "", &out.images, a.preview)?;
    if let Some(se) = &out.std_error {
        emit_images(&a.common.out, "_std", se, false)?;
    }
    let mut stats = json!({ "paths": out.n_paths, "events": out.events, "clamped": out.clamped });
    if let (Some(store), Some(p)) = (&out.store, &a.store_dump) {
        stats["store"] = serde_json::to_value(store.stats()).unwrap();
        store_io::save(store, p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    }
    write_text(&a.common.out.join("stats.json"), &serde_json::to_string_pretty(&stats).unwrap())?;
    write_manifest(&a.common, argv, json!({ "paths": a.paths }))?;
    println!("rendered {} detector(s) from {} paths", out.images.len(), out.n_paths);
    Ok(())
}

fn load_gt(dir: &Path, scene: &Scene) -> Result<Vec<Image>, CliError> {
    (0..scene.detectors().len())
        .map(|k| load_pfm(&dir.join(format!("det{k}.pfm"))).map_err(CliError::from))
        .collect()
}

fn parse_stages(s: &str) -> Result<Vec<Stage>, CliError> {
    s.split(',')
        .map(|part| {
            let bad = || CliError::Config(format!("bad stage '{part}', expected ROWSxCOLS:PATHS"));
            let (res, n) = part.trim().split_once(':').ok_or_else(bad)?;
            let (r, c) = res.split_once('x').ok_or_else(bad)?;
            Ok(Stage {
                rows: r.parse().map_err(|_| bad())?,
                cols: c.parse().map_err(|_| bad())?,
                paths: n.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn parse_pair(s: &str, what: &str) -> Result<[f64; 2], CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("{what}: expected two comma-separated numbers, got '{s}'")))?;
    <[f64; 2]>::try_from(v).map_err(|_| CliError::Config(format!("{what}: expected two numbers, got '{s}'")))
}

fn schedule(o: &OptimArgs, gt: &[Image]) -> Result<Schedule, CliError> {
    let stages = match &o.stages {
        Some(s) => parse_stages(s)?,
        None => {
            let im = gt.first().ok_or_else(|| CliError::Config("scene has no detectors".into()))?;
            vec![Stage {
                rows: im.rows,
                cols: im.cols,
                paths: o.paths,
            }]
        }
    };
    let mut s = Schedule::new(o.recycle_period, stages, o.iters);
    s.stage_cap = o.stage_cap;
    Ok(s)
}

/// Writes the loss log, checkpoint rows and checkpoint grids as the run goes.
struct Logger<'a> {
    out: &'a Path,
    every: Option<usize>,
    rows: Vec<IterRow>,
    grid: Option<(crate::scene::GridGeometry, LengthUnit)>,
    failed: Option<CliError>,
}

impl Logger<'_> {
    fn observe(&mut self, row: &IterRow, params: &[f64]) {
        self.rows.push(row.clone());
        if !self.every.is_some_and(|k| k > 0 && (row.iter + 1).is_multiple_of(k)) {
            return;
        }
        let res = (|| -> Result<(), CliError> {
            let csv = loss_csv(std::slice::from_ref(row), true);
            let path = self.out.join("checkpoints.csv");
            let text = if path.exists() { csv.split_once("\r\n").unwrap().1.to_string() } else { csv };
            append_text(&path, &text)?;
            match self.grid {
                Some((g, unit)) => save_grid(
                    &self.out.join(format!("ckpt_{:06}.vgrd", row.iter)),
                    &VoxelGridField::new(g, unit, params.to_vec()),
                )?,
                None => write_text(
                    &self.out.join(format!("ckpt_{:06}.json", row.iter)),
                    &json!({ "params": params }).to_string(),
                )?,
            }
            Ok(())
        })();
        if let (Err(e), None) = (res, &self.failed) {
            self.failed = Some(e);
        }
    }
}

fn run_optim(
    scene: &Scene,
    gt: &[Image],
    adam: &AdamConfig,
    o: &OptimArgs,
    c: &Common,
    problem: Problem,
    truth: Option<Vec<f64>>,
    mask: Option<Vec<bool>>,
    grid: Option<(crate::scene::GridGeometry, LengthUnit)>,
) -> Result<(crate::inverse::Reconstruction, Vec<IterRow>), CliError> {
    let sched = schedule(o, gt)?;
    let ropts = ReconstructOptions {
        problem,
        workers: c.workers,
        trace: TraceOptions {
            max_bounces: c.max_bounces,
        },
        sort: !o.no_sort,
        truth,
        mask,
    };
    let _ = std::fs::remove_file(c.out.join("checkpoints.csv"));
    let mut log = Logger {
        out: &c.out,
        every: o.checkpoint_every,
        rows: Vec::new(),
        grid,
        failed: None,
    };
    let result = reconstruct_with(scene, gt, adam, &sched, c.seed, &ropts, |r, p| log.observe(r, p));
    // keep whatever history exists, even when the run aborted
    write_text(&c.out.join("loss.csv"), &loss_csv(&log.rows, false))?;
    if let Some(e) = log.failed {
        return Err(e);
    }
    Ok((result?, log.rows))
}

fn summary(rec: &crate::inverse::Reconstruction) -> serde_json::Value {
    json!({
        "iterations": rec.history.len(),
        "sampling_phases": rec.phases,
        "stage_ends": rec.stage_ends,
        "final_loss": rec.history.last().map(|r| r.loss),
    })
}

fn cmd_reconstruct(a: ReconstructArgs, argv: &[String]) -> Result<(), CliError> {
    let mut scene = open_scene(&a.scene)?;
    prepare_out(&a.common.out)?;
    let gt = load_gt(&a.optim.gt_dir, &scene)?;
    let problem = Problem::Tomography {
        species: a.species,
        compat: a.compat,
    };
    let grid = *scene.grid();
    let mut hull = None;
    if let Some(th) = a.carve {
        let mean = a
            .init_mean
            .ok_or_else(|| CliError::Config("--carve needs --init-mean".into()))?;
        let (mask, init) = space_carve(&gt, scene.detectors(), &grid, th, mean)?;
        println!("space carving kept {} of {} voxels", mask.iter().filter(|&&m| m).count(), mask.len());
        scene = problem.apply(&scene, &init).map_err(config)?;
        hull = Some(mask);
    }
    let truth = match &a.truth {
        Some(p) => {
            let f = load_grid(p)?;
            if f.geometry.dims != grid.dims {
                return Err(CliError::Config(format!("{}: grid does not match the scene", p.display())));
            }
            Some(f.values)
        }
        None => None,
    };
    let adam = AdamConfig {
        step_size: a.optim.alpha,
        epsilon: a.optim.adam_epsilon,
        ..Default::default()
    };
    let (rec, _) = run_optim(
        &scene,
        &gt,
        &adam,
        &a.optim,
        &a.common,
        problem,
        truth.clone(),
        hull,
        Some((grid, scene.spec().unit)),
    )?;
    save_grid(
        &a.common.out.join("estimate.vgrd"),
        &VoxelGridField::new(grid, scene.spec().unit, rec.params.clone()),
    )?;
    let mut s = summary(&rec);
    if let Some(t) = &truth {
        let (e, d) = metrics(&rec.params, t)?;
        s["eps"] = json!(e);
        s["delta"] = json!(d);
        println!("eps={e} delta={d}");
    }
    write_text(&a.common.out.join("summary.json"), &serde_json::to_string_pretty(&s).unwrap())?;
    write_manifest(&a.common, argv, json!({ "alpha": a.optim.alpha, "recycle_period": a.optim.recycle_period }))?;
    Ok(())
}

fn cmd_reflectometry(a: ReflectometryArgs, argv: &[String]) -> Result<(), CliError> {
    let mut scene = open_scene(&a.scene)?;
    prepare_out(&a.common.out)?;
    let gt = load_gt(&a.optim.gt_dir, &scene)?;
    let problem = Problem::Reflectometry { surface: a.surface };
    if let Some(init) = &a.init {
        let x = parse_pair(init, "--init")?;
        scene = problem.apply(&scene, &x).map_err(config)?;
    }
    problem.values(&scene).map_err(|e: GradientError| config(e))?;
    let truth = a.truth.as_deref().map(|t| parse_pair(t, "--truth")).transpose()?;
    let adam = AdamConfig {
        step_size: a.optim.alpha,
        epsilon: a.optim.adam_epsilon,
        scales: parse_pair(&a.scales, "--scales")?.to_vec(),
        ..Default::default()
    };
    let (rec, _) = run_optim(
        &scene,
        &gt,
        &adam,
        &a.optim,
        &a.common,
        problem,
        truth.map(|t| t.to_vec()),
        None,
        None,
    )?;
    let mut s = summary(&rec);
    s["kappa_s"] = json!(rec.params[0]);
    s["gamma"] = json!(rec.params[1]);
    if let Some(t) = truth {
        let rel = |i: usize| (rec.params[i] - t[i]).abs() / t[i].abs();
        s["rel_error"] = json!([rel(0), rel(1)]);
    }
    println!("kappa_s={} gamma={}", rec.params[0], rec.params[1]);
    write_text(&a.common.out.join("summary.json"), &serde_json::to_string_pretty(&s).unwrap())?;
    write_manifest(&a.common, argv, json!({ "alpha": a.optim.alpha, "recycle_period": a.optim.recycle_period }))?;
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), CliError> {
    let est = load_grid(&a.est)?;
    let truth = load_grid(&a.truth)?;
    let (e, d) = metrics(&est.values, &truth.values)?;
    println!("eps={e} delta={d}");
    Ok(())
}

fn cmd_selftest(a: SelftestArgs) -> Result<(), CliError> {
    let mut failed = 0;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    };

    let rule = gauss_legendre(64);
    for p in [
        PhaseFunction::HenyeyGreenstein { g: 0.0 },
        PhaseFunction::HenyeyGreenstein { g: 0.5 },
        PhaseFunction::Rayleigh,
    ] {
        let norm = 2.0 * std::f64::consts::PI * gl_integrate(&rule, -1.0, 1.0, |c| p.eval(c));
        check("phase normalization", (norm - 1.0).abs() < 1e-6, format!("{p:?} integrates to {norm}"));
    }

    let g = cube_grid(1.0, [3; 3]);
    let vals: Vec<f64> = (0..27).map(|i| 0.5 + (i % 5) as f64).collect();
    let scene = Scene::new(single_species(
        g,
        LengthUnit::M,
        vals,
        0.9,
        PhaseFunction::HenyeyGreenstein { g: 0.5 },
        zenith_sun(1.0),
        vec![nadir_camera(&g, 2.0, 4, 4, 0.8)],
    ))
    .map_err(config)?;
    let (x, y) = (crate::geometry::Vec3::new(0.03, 0.11, 0.07), crate::geometry::Vec3::new(0.97, 0.83, 0.91));
    let dda = optical_depth(&scene, x, y);
    let oracle = riemann_optical_depth(&scene, x, y, 1e-3);
    check("optical depth", ((dda - oracle) / oracle).abs() < 1e-9, format!("dda {dda} oracle {oracle}"));

    let opts = RenderOptions {
        workers: a.workers,
        ..Default::default()
    };
    let out = render(&scene, 2000, 1, opts).map_err(config)?;
    let total = out.images[0].sum();
    check("render", total.is_finite() && total > 0.0, format!("image sum {total}"));
    let two = render(&scene, 2000, 1, RenderOptions { workers: Some(2), ..opts }).map_err(config)?;
    check("determinism", two.images == out.images, "1 vs 2 workers".into());

    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stages_and_pairs() {
        let s = parse_stages("30x30:1000,60x40:5000").unwrap();
        assert_eq!(s[1], Stage { rows: 60, cols: 40, paths: 5000 });
        assert!(parse_stages("30:1000").is_err());
        assert_eq!(parse_pair("0.5, 30", "x").unwrap(), [0.5, 30.0]);
        assert!(parse_pair("0.5", "x").is_err());
    }

    #[test]
    fn exit_codes_for_bad_invocations() {
        assert_eq!(run(["pathrec", "render", "--bogus"]), 2);
        assert_eq!(run(["pathrec", "--help"]), 0);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "pathrec",
            "render",
            "--scene",
            "/nonexistent/s.json",
            "--paths",
            "10",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }
}
