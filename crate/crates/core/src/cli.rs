//! The `empi` command line.
//!
//! Every subcommand reads and writes the formats in [`crate::io`], so the
//! stages can be run separately or swapped for external tools.
//!
//! `--config FILE` names a JSON object of default flag values. Top-level
//! keys apply to any subcommand that has a flag of that name; an object
//! under a subcommand's name applies to that subcommand only and takes
//! precedence. Flags given on the command line win over both. Keys are flag
//! names with `-` or `_`; booleans map to `on`/`off`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::camera::{sample_poses, CameraModel, ExpansionSpec, Intrinsics, Pose, PoseRanges};
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::io::bundle::{load_external_views, save_views};
use crate::io::container::{load_kernel, load_mpi, save_kernel, save_mpi};
use crate::io::raster::{read_depth, read_dpth, read_mask_png, read_rgb_png, write_dpth, write_rgb_png, write_rgb_png16};
use crate::io::trajectory::{read_trajectory, write_trajectory};
use crate::io::web::export_web;
use crate::io::{create_dir, write_atomic, write_json};
use crate::metrics::{depth_l1, psnr_masked, ssim_masked, MetricReport, ViewMetrics};
use crate::mpi::{init_mpi, render_view, BilateralKernel, PlaneSpacing};
use crate::optim::{gradcheck, optimize, trace_to_csv, GradcheckConfig, LossMode, OptimizeConfig};
use crate::pseudo::build_pseudo_views;
use crate::real::Precision;
use crate::synthetic::{synthetic_scene, SceneConfig};
use crate::warp::SplatRadius;

#[derive(Debug, Parser)]
#[command(name = "empi", version, about = "Expanded multiplane images from a single RGB-D view")]
pub struct Cli {
    /// JSON file of default flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an expanded MPI from an RGB image and its depth.
    Init(InitArgs),
    /// Warp the source view into sampled poses and fill the holes.
    Pseudo(PseudoArgs),
    /// Fit the trainable texels and filter weights to a view bundle.
    Optimize(OptimizeArgs),
    /// Render an MPI along a camera trajectory.
    Render(RenderArgs),
    /// Write the MPI as a web bundle of RGBA planes.
    ExportWeb(ExportWebArgs),
    /// Score rendered images against ground truth.
    Eval(EvalArgs),
    /// Check the analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a procedural scene with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    Depth,
    Disparity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplatArg {
    Point,
    Block2,
}

/// Source camera: principal point at the image centre.
#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 60.0)]
    pub fov: f64,
    /// Focal length in pixels; takes precedence over --fov.
    #[arg(long)]
    pub focal: Option<f64>,
}

impl CameraArgs {
    fn intrinsics(&self, width: usize, height: usize) -> Result<Intrinsics> {
        match self.focal {
            Some(f) => Intrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height),
            None => Intrinsics::centered(width, height, self.fov.to_radians()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// `.dpth`, or a 16-bit `.png` with a `.json` range sidecar.
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub planes: usize,
    /// Expanded frustum angle in degrees [default: field of view + 30].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Plane-size expansion factor; alternative to --theta.
    #[arg(long)]
    pub expansion: Option<f64>,
    /// Nearest plane depth [default: depth minimum].
    #[arg(long)]
    pub near: Option<f32>,
    /// Farthest plane depth [default: depth maximum].
    #[arg(long)]
    pub far: Option<f32>,
    #[arg(long, value_enum, default_value_t = SpacingArg::Depth)]
    pub spacing: SpacingArg,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PseudoArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub depth: PathBuf,
    /// Trajectory file of target cameras; when absent, --n poses are sampled.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Number of sampled poses, the source pose included.
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Yaw jitter bound in degrees.
    #[arg(long, default_value_t = 5.0)]
    pub max_yaw: f64,
    /// Pitch jitter bound in degrees.
    #[arg(long, default_value_t = 3.0)]
    pub max_pitch: f64,
    /// Camera-centre jitter bound per axis, in depth units.
    #[arg(long, default_value_t = 0.1)]
    pub max_translation: f64,
    #[arg(long, value_enum, default_value_t = SplatArg::Point)]
    pub splat: SplatArg,
    #[command(flatten)]
    pub camera: CameraArgs,
    /// Output view-bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub mpi: PathBuf,
    /// View-bundle directory.
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub filter: Switch,
    /// Fixed-order reductions; results are reproducible bit for bit.
    #[arg(long, value_enum, num_args = 0..=1, default_value_t = Switch::On, default_missing_value = "on")]
    pub deterministic: Switch,
    /// `l1` or `l1_plus_dssim`.
    #[arg(long, default_value = "l1")]
    pub loss: LossMode,
    #[arg(long, default_value_t = 0.0)]
    pub dssim_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `f32` or `f64`.
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV [default: <out>.trace.csv].
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mpi: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Apply the stored filter kernel [default: on when one is stored].
    #[arg(long, value_enum)]
    pub filter: Option<Switch>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportWebArgs {
    #[arg(long)]
    pub mpi: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Optional masks (same file names) restricting the evaluated pixels.
    #[arg(long)]
    pub mask_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    pub planes: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
    #[arg(long, default_value_t = 200)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Report file [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub planes: usize,
    #[arg(long, default_value_t = 12)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args` (program name first), merge `--config`, run, and return
/// the exit code. Usage errors print the usage text and return 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        cmd = cmd.mut_subcommand(n, |s| s.args_override_self(true));
    }
    cmd
}

/// Outer error: the config file itself is unusable. Inner error: clap.
fn parse(args: &[OsString]) -> Result<std::result::Result<Cli, clap::Error>> {
    let cmd = command();
    let (config, sub_index) = prescan(args);
    let args = match (config, sub_index) {
        (Some(path), Some(i)) => {
            let sub = args[i].to_string_lossy().into_owned();
            let tokens = config_tokens(&cmd, &sub, &path)?;
            let mut merged = args[..=i].to_vec();
            merged.extend(tokens);
            merged.extend_from_slice(&args[i + 1..]);
            merged
        }
        _ => args.to_vec(),
    };
    Ok(cmd.try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)))
}

/// Locate `--config` and the subcommand token without full parsing, so
/// config values can fill required flags.
fn prescan(args: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let t = args[i].to_string_lossy();
        if t == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = t.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub.is_none() && !t.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

fn config_tokens(cmd: &clap::Command, sub: &str, path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    let Value::Object(root) = root else {
        return Err(Error::format(path, "config must be a JSON object"));
    };
    let Some(target) = cmd.find_subcommand(sub) else {
        return Ok(Vec::new());
    };
    let long_of = |c: &clap::Command, key: &str| {
        let key = key.replace('_', "-");
        c.get_arguments().find(|a| a.get_long() == Some(key.as_str()) && key != "config").map(|_| key)
    };
    let subcommands: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();

    let mut flat = Vec::new();
    let mut section = Vec::new();
    for (key, value) in &root {
        if subcommands.contains(&key.as_str()) {
            if key != sub {
                continue;
            }
            let Value::Object(entries) = value else {
                return Err(Error::format(path, format!("config section '{key}' must be an object")));
            };
            for (k, v) in entries {
                let long = long_of(target, k)
                    .ok_or_else(|| Error::format(path, format!("unknown key '{k}' for '{sub}'")))?;
                section.push(token(path, &long, v)?);
            }
        } else if let Some(long) = long_of(target, key) {
            flat.push(token(path, &long, value)?);
        } else if !cmd.get_subcommands().any(|s| long_of(s, key).is_some()) {
            return Err(Error::format(path, format!("unknown config key '{key}'")));
        }
    }
    flat.extend(section);
    Ok(flat)
}

fn token(path: &Path, long: &str, value: &Value) -> Result<OsString> {
    let v = match value {
        Value::Bool(b) => if *b { "on" } else { "off" }.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        _ => return Err(Error::format(path, format!("config key '{long}' must be a string, number or boolean"))),
    };
    Ok(format!("--{long}={v}").into())
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Init(a) => cmd_init(&a),
        Command::Pseudo(a) => cmd_pseudo(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Render(a) => cmd_render(&a),
        Command::ExportWeb(a) => cmd_export_web(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn cmd_init(a: &InitArgs) -> Result<i32> {
    let rgb = read_rgb_png(&a.image)?;
    let depth = read_depth(&a.depth)?;
    let k = a.camera.intrinsics(rgb.width(), rgb.height())?;
    let expansion = match (a.theta, a.expansion) {
        (Some(_), Some(_)) => return Err(Error::Domain("give --theta or --expansion, not both".into())),
        (Some(t), None) => ExpansionSpec::from_theta(&k, t.to_radians())?,
        (None, Some(e)) => ExpansionSpec::from_factor(&k, e)?,
        (None, None) => {
            let theta = (k.fov() + 30f64.to_radians()).min(170f64.to_radians());
            ExpansionSpec::from_theta(&k, theta)?
        }
    };
    let (lo, hi) = depth.range();
    let range = (a.near.unwrap_or(lo), a.far.unwrap_or(hi));
    let spacing = match a.spacing {
        SpacingArg::Depth => PlaneSpacing::Depth,
        SpacingArg::Disparity => PlaneSpacing::Disparity,
    };
    let init = init_mpi(&rgb, &depth, &CameraModel::at_origin(k), a.planes, expansion, range, spacing)?;
    ensure_parent(&a.out)?;
    save_mpi(&a.out, &init.volume, Some(&init.freeze))?;
    log::info!(
        "wrote {} planes of {}x{} (expansion {:.4}, depth [{}, {}]) to {}",
        init.volume.planes(),
        init.volume.width(),
        init.volume.height(),
        init.volume.expansion().a,
        range.0,
        range.1,
        a.out.display()
    );
    Ok(0)
}

fn cmd_pseudo(a: &PseudoArgs) -> Result<i32> {
    let rgb = read_rgb_png(&a.image)?;
    let depth = read_depth(&a.depth)?;
    let k = a.camera.intrinsics(rgb.width(), rgb.height())?;
    let reference = CameraModel::at_origin(k);
    let poses: Vec<Pose> = match &a.poses {
        Some(p) => {
            let cams = read_trajectory(p)?;
            if let Some(c) = cams.iter().find(|c| (c.width(), c.height()) != (k.width, k.height)) {
                return Err(Error::format(
                    p,
                    format!("camera is {}x{} but the image is {}x{}", c.width(), c.height(), k.width, k.height),
                ));
            }
            cams.into_iter().map(|c| c.pose).collect()
        }
        None => {
            let t = a.max_translation;
            let ranges = PoseRanges {
                max_translation: [t, t, t],
                max_yaw: a.max_yaw.to_radians(),
                max_pitch: a.max_pitch.to_radians(),
            };
            sample_poses(&Pose::identity(), &ranges, a.n, a.seed)
        }
    };
    let splat = match a.splat {
        SplatArg::Point => SplatRadius::Point,
        SplatArg::Block2 => SplatRadius::Block2,
    };
    let views = build_pseudo_views(&rgb, &depth, &reference, &poses, splat)?;
    save_views(&a.out, &views)?;
    let filled: usize = views.iter().map(|v| v.inpaint_mask.count()).sum();
    log::info!(
        "wrote {} views to {} ({:.1}% of pixels synthesized)",
        views.len(),
        a.out.display(),
        100.0 * filled as f64 / (views.len() * k.width * k.height) as f64
    );
    Ok(0)
}

fn trace_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".trace.csv");
    PathBuf::from(s)
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<i32> {
    let (mpi, freeze) = load_mpi(&a.mpi)?;
    let kernel = load_kernel(&a.mpi)?.unwrap_or_default();
    let views = load_external_views(&a.views)?;
    let config = OptimizeConfig {
        iters: a.iters,
        step_size: a.lr,
        batch: a.batch,
        loss_mode: a.loss,
        dssim_weight: a.dssim_weight,
        filter_enabled: a.filter.on(),
        deterministic: a.deterministic.on(),
        seed: a.seed,
        precision: a.precision,
        momentum: a.momentum,
        ..Default::default()
    };
    if !config.deterministic {
        log::info!("reductions run in a fixed order regardless of --deterministic");
    }
    let t = std::time::Instant::now();
    let fit = optimize(&mpi, &freeze, &kernel, &views, &config)?;
    ensure_parent(&a.out)?;
    save_mpi(&a.out, &fit.mpi, Some(&freeze))?;
    if config.filter_enabled {
        save_kernel(&a.out, &fit.kernel)?;
    }
    let trace = a.trace.clone().unwrap_or_else(|| trace_path(&a.out));
    write_atomic(&trace, trace_to_csv(&fit.trace).as_bytes())?;
    if let Some(last) = fit.trace.last() {
        log::info!(
            "{} steps in {:.1?}: loss {:.6}, reference psnr {:.2} dB",
            fit.trace.len(),
            t.elapsed(),
            last.loss,
            last.psnr_ref
        );
    }
    Ok(0)
}

#[derive(Serialize)]
struct FrameReport {
    frame: String,
    out_of_frustum: usize,
    mean_opacity: f64,
}

fn cmd_render(a: &RenderArgs) -> Result<i32> {
    let (mpi, _) = load_mpi(&a.mpi)?;
    let stored = load_kernel(&a.mpi)?;
    let kernel: Option<BilateralKernel> = match a.filter {
        Some(Switch::Off) => None,
        Some(Switch::On) => Some(stored.unwrap_or_default()),
        None => stored,
    };
    let cameras = read_trajectory(&a.trajectory)?;
    create_dir(&a.out_dir)?;
    let mut report = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let r = render_view(&mpi, cam, kernel.as_ref())?;
        let name = format!("frame_{i:04}.png");
        write_rgb_png(&a.out_dir.join(&name), &r.rgb)?;
        report.push(FrameReport {
            frame: name,
            out_of_frustum: r.out_of_frustum,
            mean_opacity: r.opacity.iter().map(|&o| o as f64).sum::<f64>() / r.opacity.len() as f64,
        });
    }
    write_json(&a.out_dir.join("render.json"), &report)?;
    log::info!("rendered {} frames to {}", cameras.len(), a.out_dir.display());
    Ok(0)
}

fn cmd_export_web(a: &ExportWebArgs) -> Result<i32> {
    let (mpi, _) = load_mpi(&a.mpi)?;
    let m = export_web(&mpi, &a.out)?;
    log::info!("exported {} planes of {}x{} to {}", m.planes, m.width, m.height, a.out.display());
    Ok(0)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let mut names: Vec<String> = std::fs::read_dir(&a.gt_dir)
        .map_err(|e| Error::io(&a.gt_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::format(&a.gt_dir, "no PNG images to evaluate"));
    }
    let mut per_view = Vec::with_capacity(names.len());
    for name in names {
        let gt = read_rgb_png(&a.gt_dir.join(&name))?;
        let pred_path = a.pred_dir.join(&name);
        if !pred_path.exists() {
            return Err(Error::format(&pred_path, "prediction missing for ground-truth image"));
        }
        let pred = read_rgb_png(&pred_path)?;
        let mask = match &a.mask_dir {
            Some(d) => read_mask_png(&d.join(&name))?,
            None => Mask::new(gt.width(), gt.height(), true),
        };
        let stem = name.trim_end_matches(".png");
        let (pd, gd) = (a.pred_dir.join(format!("{stem}.dpth")), a.gt_dir.join(format!("{stem}.dpth")));
        let depth = if pd.exists() && gd.exists() {
            Some(depth_l1(&read_dpth(&pd)?, &read_dpth(&gd)?, &mask)?)
        } else {
            None
        };
        per_view.push(ViewMetrics {
            psnr: psnr_masked(&pred, &gt, &mask)?,
            ssim: ssim_masked(&pred, &gt, &mask)?,
            depth_l1: depth,
            name,
        });
    }
    let report = MetricReport::from_views(per_view)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &report)?;
    println!("psnr {:.3} dB  ssim {:.4}", report.mean.psnr, report.mean.ssim);
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let report = gradcheck(&GradcheckConfig {
        planes: a.planes,
        width: a.width,
        height: a.height,
        seed: a.seed,
        precision: a.precision,
        probes: a.probes,
        step: a.step,
    })?;
    match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            write_json(p, &report)?;
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| Error::Json {
                path: "<stdout>".into(),
                source: e,
            })?
        ),
    }
    eprintln!(
        "gradcheck {}: max relative error {:.3e} (tolerance {:.0e})",
        if report.passed { "passed" } else { "FAILED" },
        report.max_rel_error,
        report.tolerance
    );
    // a failed check must fail the process
    Ok(if report.passed { 0 } else { 1 })
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let scene = synthetic_scene(&SceneConfig {
        size: a.size,
        planes: a.planes,
        views: a.views,
        seed: a.seed,
        ..SceneConfig::default()
    })?;
    let gt = a.out.join("gt");
    create_dir(&gt)?;
    let src = &scene.views[0];
    write_rgb_png16(&a.out.join("source.png"), &src.rgb)?;
    write_dpth(&a.out.join("source.dpth"), &src.depth)?;
    let cams: Vec<CameraModel> = scene.views.iter().map(|v| v.camera).collect();
    write_trajectory(&a.out.join("trajectory.json"), &cams)?;
    for (i, v) in scene.views.iter().enumerate() {
        write_rgb_png(&gt.join(format!("frame_{i:04}.png")), &v.rgb)?;
        write_dpth(&gt.join(format!("frame_{i:04}.dpth")), &v.depth)?;
    }
    write_json(
        &a.out.join("scene.json"),
        &serde_json::json!({
            "size": a.size,
            "planes": a.planes,
            "views": a.views,
            "seed": a.seed,
            "fov_degrees": scene.config.fov.to_degrees(),
            "near": scene.config.near,
            "far": scene.config.far,
            "expansion": scene.config.expansion,
        }),
    )?;
    log::info!("wrote a {}x{} scene with {} views to {}", a.size, a.size, a.views, a.out.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(args: &[&str]) -> Cli {
        parse(&args.iter().map(OsString::from).collect::<Vec<_>>()).unwrap().unwrap()
    }

    #[test]
    fn flags_parse() {
        let cli = parse_ok(&["empi", "optimize", "--mpi", "a", "--views", "v", "--out", "b", "--filter", "off", "--deterministic"]);
        let Command::Optimize(a) = cli.command else { panic!() };
        assert_eq!(a.filter, Switch::Off);
        assert_eq!(a.deterministic, Switch::On);
        assert_eq!(a.iters, 500);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = parse(&["empi", "render", "--bogus"].map(OsString::from)).unwrap().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(run(["empi", "init", "--nope", "1"]), 2);
    }

    #[test]
    fn config_fills_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"iters": 7, "seed": 3, "size": 32, "optimize": {"mpi": "m.empi", "views": "v", "out": "o.empi", "lr": 0.5, "filter": false}}"#,
        )
        .unwrap();
        let c = cfg.to_str().unwrap();
        let cli = parse_ok(&["empi", "--config", c, "optimize", "--lr", "0.25"]);
        let Command::Optimize(a) = cli.command else { panic!() };
        assert_eq!((a.iters, a.seed, a.lr, a.filter), (7, 3, 0.25, Switch::Off));
        assert_eq!(a.mpi, PathBuf::from("m.empi"));
        let cli = parse_ok(&["empi", "optimize", "--iters", "9", "--config", c]);
        let Command::Optimize(a) = cli.command else { panic!() };
        assert_eq!(a.iters, 9);

        std::fs::write(&cfg, r#"{"optimize": {"bogus": 1}}"#).unwrap();
        assert!(parse(&["empi", "--config", c, "optimize"].map(OsString::from)).is_err());
        std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
        assert!(parse(&["empi", "--config", c, "optimize"].map(OsString::from)).is_err());
    }
}
