//! Command-line front end: one binary, one subcommand per pipeline stage.
//!
//! Every subcommand writes its results to files and prints a one-line JSON
//! summary on stdout. Exit codes: 0 success, 1 usage error, 2 computation
//! error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::geometry::{CameraIntrinsics, EulerAngles, Point3, RigidTransform};
use crate::io::{read_json, read_ppm, read_training_set, write_json, write_ppm};
use crate::mesh::{export_ply, marching_cubes, sample_grid};
use crate::metrics::evaluate;
use crate::pnp::{head_pose_angles, solve_pnp, PoseProblem};
use crate::radiance::{
    read_checkpoint, render_image, train_from, write_checkpoint, EncodingConfig, FieldParameters, RenderConfig,
    SceneBounds, TrainConfig,
};
use crate::registration::{rigid_register, Fiducial, FiducialSet};
use crate::simulate::{evaluate_field, heldout_views, simulate, write_dataset, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "twinnav", version, about = "Head digital-twin navigation toolkit")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "TWINNAV_THREADS")]
    pub threads: Option<usize>,
    /// Fix every reduction order so outputs are byte-identical across runs
    /// and thread counts. Reductions are always ordered; the flag is kept
    /// for explicitness.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Random seed; overrides the seed in a simulation config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a radiance field to posed images.
    Train(TrainArgs),
    /// Render a view of a trained field.
    Render(RenderArgs),
    /// Extract an isosurface mesh from a trained field.
    Mesh(MeshArgs),
    /// Estimate head pose from 2D-3D landmark correspondences.
    Pose(PoseArgs),
    /// Rigidly register two fiducial sets.
    Register(RegisterArgs),
    /// Run the synthetic end-to-end pipeline.
    Simulate(SimulateArgs),
    /// Compare two images with PSNR and SSIM.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Near plane (mm); defaults to the manifest value, else 450.
    #[arg(long)]
    pub near: Option<f64>,
    /// Far plane (mm); defaults to the manifest value, else 750.
    #[arg(long)]
    pub far: Option<f64>,
    /// Samples per ray.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Composite escaped rays over white instead of black.
    #[arg(long)]
    pub white_background: bool,
}

impl SamplingArgs {
    fn config(&self, base: Option<RenderConfig>) -> RenderConfig {
        let base = base.unwrap_or_default();
        RenderConfig {
            near: self.near.unwrap_or(base.near),
            far: self.far.unwrap_or(base.far),
            samples: self.samples,
            stratified: false,
            background: if self.white_background { [1.0; 3] } else { [0.0; 3] },
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Position encoding octaves.
    #[arg(long, default_value_t = 6)]
    pub position_frequencies: usize,
    /// Direction encoding octaves.
    #[arg(long, default_value_t = 4)]
    pub direction_frequencies: usize,
    /// Initial density head bias (pre-softplus) for a fresh field.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub density_bias: f64,
    /// Scene box as min_x min_y min_z max_x max_y max_z (mm); defaults to the
    /// manifest value.
    #[arg(long, num_args = 6, allow_negative_numbers = true)]
    pub bounds: Option<Vec<f64>>,
    /// Write the per-step loss log here (JSON).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Resume from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Camera intrinsics (JSON). Use with --pose.
    #[arg(long, requires = "pose", conflicts_with = "manifest")]
    pub intrinsics: Option<PathBuf>,
    /// Camera-to-world transform as 16 row-major values (JSON).
    #[arg(long, requires = "intrinsics")]
    pub pose: Option<PathBuf>,
    /// Render the camera of a manifest frame instead. Use with --frame.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Output image (binary PPM).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Density threshold (per mm).
    #[arg(long, default_value_t = 5.0)]
    pub iso: f64,
    /// Lattice points along the longest side of the scene box.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Output mesh (ASCII PLY).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Intrinsics and correspondences (JSON).
    #[arg(long)]
    pub correspondences: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fiducials to move, e.g. measured in the tracking frame (JSON).
    #[arg(long)]
    pub moving: PathBuf,
    /// Fiducials to align to, e.g. in the model frame (JSON).
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pipeline report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the generated dataset (images, correspondences,
    /// fiducials, marker poses) to this directory.
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Trained field to evaluate against held-out orbit views; needs an
    /// orbit block in the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Write the metric report here (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed run: usage errors name the offending flag.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(String),
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn input(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{flag}: no such file {}", path.display())))
    }
}

fn output_dir_ok(flag: &str, path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Usage(format!(
            "--{flag}: directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let threads = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            EXIT_FAILURE
        }
    }
}

pub fn run(cli: &Cli) -> Result<serde_json::Value, CliError> {
    match &cli.command {
        Command::Train(a) => train_cmd(cli, a),
        Command::Render(a) => render_cmd(a),
        Command::Mesh(a) => mesh_cmd(a),
        Command::Pose(a) => pose_cmd(a),
        Command::Register(a) => register_cmd(a),
        Command::Simulate(a) => simulate_cmd(cli, a),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<serde_json::Value, CliError> {
    input("manifest", &a.manifest)?;
    output_dir_ok("out", &a.out)?;
    if let Some(p) = &a.init {
        input("init", p)?;
    }
    let (manifest, views) = read_training_set(&a.manifest).map_err(fail)?;
    let bounds = match (&a.bounds, manifest.bounds) {
        (Some(b), _) => SceneBounds::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
            .map_err(|e| CliError::Usage(format!("--bounds: {e}")))?,
        (None, Some(b)) => b,
        (None, None) => return Err(CliError::Usage("--bounds is required when the manifest has none".into())),
    };
    let render = a.sampling.config(manifest.render);
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        seed: cli.seed.unwrap_or(0),
        adam: crate::radiance::AdamConfig {
            learning_rate: a.lr,
            ..Default::default()
        },
        encoding: EncodingConfig {
            position_frequencies: a.position_frequencies,
            direction_frequencies: a.direction_frequencies,
        },
        ..TrainConfig::new(bounds, render)
    };
    let init = match &a.init {
        Some(p) => read_checkpoint(p).map_err(fail)?,
        None => FieldParameters::init(cfg.encoding, bounds, cfg.architecture, cfg.seed)
            .with_density_bias(a.density_bias),
    };
    let outcome = train_from(init, &views, &cfg, |_, _, _| {}).map_err(fail)?;
    write_checkpoint(&outcome.params, &a.out).map_err(fail)?;
    if let Some(log) = &a.log {
        write_json(log, &json!({ "loss": outcome.loss_log })).map_err(fail)?;
    }
    Ok(json!({
        "command": "train",
        "views": views.len(),
        "steps": cfg.steps,
        "first_loss": outcome.loss_log.first(),
        "final_loss": outcome.loss_log.last(),
        "checkpoint": a.out,
    }))
}

fn render_cmd(a: &RenderArgs) -> Result<serde_json::Value, CliError> {
    input("checkpoint", &a.checkpoint)?;
    output_dir_ok("out", &a.out)?;
    let params = read_checkpoint(&a.checkpoint).map_err(fail)?;
    let (k, pose, base): (CameraIntrinsics, RigidTransform, Option<RenderConfig>) =
        match (&a.manifest, &a.intrinsics, &a.pose) {
            (Some(m), _, _) => {
                input("manifest", m)?;
                let (manifest, views) = read_training_set(m).map_err(fail)?;
                let v = views.get(a.frame).ok_or_else(|| {
                    CliError::Usage(format!("--frame: manifest has {} frames", views.len()))
                })?;
                (v.intrinsics, v.cam_to_world, manifest.render)
            }
            (None, Some(k), Some(p)) => {
                input("intrinsics", k)?;
                input("pose", p)?;
                (read_json(k).map_err(fail)?, read_json(p).map_err(fail)?, None)
            }
            _ => return Err(CliError::Usage("give --manifest, or --intrinsics with --pose".into())),
        };
    let cfg = a.sampling.config(base);
    let image = render_image(&params, &k, &pose, &cfg).map_err(fail)?;
    write_ppm(&a.out, &image).map_err(fail)?;
    Ok(json!({
        "command": "render",
        "width": image.width,
        "height": image.height,
        "image": a.out,
    }))
}

fn mesh_cmd(a: &MeshArgs) -> Result<serde_json::Value, CliError> {
    input("checkpoint", &a.checkpoint)?;
    output_dir_ok("out", &a.out)?;
    if a.res < 2 {
        return Err(CliError::Usage("--res must be at least 2".into()));
    }
    if !a.iso.is_finite() {
        return Err(CliError::Usage("--iso must be finite".into()));
    }
    let params = read_checkpoint(&a.checkpoint).map_err(fail)?;
    let b = params.bounds;
    let extent: Vec<f64> = (0..3).map(|i| b.max[i] - b.min[i]).collect();
    let spacing = extent.iter().copied().fold(0.0, f64::max) / (a.res - 1) as f64;
    let dims = [0, 1, 2].map(|i| ((extent[i] / spacing - 1e-9).ceil() as usize + 1).max(2));
    let grid = sample_grid(&params, Point3::from(b.min), spacing, dims).map_err(fail)?;
    let surface = marching_cubes(&grid, a.iso).map_err(fail)?;
    export_ply(&surface.mesh, &a.out).map_err(fail)?;
    if surface.degenerate_iso {
        eprintln!("warning: iso {} lies outside the sampled density range; mesh is empty", a.iso);
    }
    Ok(json!({
        "command": "mesh",
        "vertices": surface.mesh.vertices.len(),
        "triangles": surface.mesh.triangles.len(),
        "degenerate_iso": surface.degenerate_iso,
        "watertight": surface.mesh.is_watertight(),
        "mesh": a.out,
    }))
}

#[derive(Serialize)]
struct PoseOutput {
    matrix: RigidTransform,
    angles: EulerAngles,
    rms_reprojection_px: f64,
    iterations: usize,
    converged: bool,
}

fn pose_cmd(a: &PoseArgs) -> Result<serde_json::Value, CliError> {
    input("correspondences", &a.correspondences)?;
    output_dir_ok("out", &a.out)?;
    let problem: PoseProblem = read_json(&a.correspondences).map_err(fail)?;
    let sol = solve_pnp(&problem.intrinsics, &problem.correspondences, None).map_err(fail)?;
    let out = PoseOutput {
        matrix: sol.pose,
        angles: head_pose_angles(&sol),
        rms_reprojection_px: sol.rms_reprojection_px,
        iterations: sol.iterations,
        converged: sol.converged,
    };
    write_json(&a.out, &out).map_err(fail)?;
    Ok(json!({
        "command": "pose",
        "yaw": out.angles.yaw,
        "pitch": out.angles.pitch,
        "roll": out.angles.roll,
        "rms_reprojection_px": out.rms_reprojection_px,
        "converged": out.converged,
    }))
}

fn register_cmd(a: &RegisterArgs) -> Result<serde_json::Value, CliError> {
    input("moving", &a.moving)?;
    input("fixed", &a.fixed)?;
    output_dir_ok("out", &a.out)?;
    let load = |p: &Path| -> Result<FiducialSet, CliError> {
        let pts: Vec<Fiducial> = read_json(p).map_err(fail)?;
        let frame = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        FiducialSet::new(frame, pts).map_err(fail)
    };
    let result = rigid_register(&load(&a.moving)?, &load(&a.fixed)?).map_err(fail)?;
    write_json(&a.out, &result).map_err(fail)?;
    Ok(json!({ "command": "register", "fre_mm": result.fre_mm }))
}

fn simulate_cmd(cli: &Cli, a: &SimulateArgs) -> Result<serde_json::Value, CliError> {
    input("config", &a.config)?;
    output_dir_ok("out", &a.out)?;
    if let Some(p) = &a.checkpoint {
        input("checkpoint", p)?;
    }
    let mut cfg: SimConfig = read_json(&a.config).map_err(fail)?;
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    let (scene, dataset, mut report) = simulate(&cfg, a.dataset_dir.is_some()).map_err(fail)?;
    if let Some(p) = &a.checkpoint {
        let spec = cfg
            .orbit
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint needs an orbit block in the config".into()))?;
        let params = read_checkpoint(p).map_err(fail)?;
        let (heldout, render) = heldout_views(&scene, spec).map_err(fail)?;
        report.render = Some(evaluate_field(&params, &heldout, &render).map_err(fail)?);
    }
    if let Some(dir) = &a.dataset_dir {
        write_dataset(dir, &scene, &dataset, &cfg.render, cfg.orbit.as_ref()).map_err(fail)?;
    }
    write_json(&a.out, &report).map_err(fail)?;
    Ok(json!({
        "command": "simulate",
        "frames": report.frames.len(),
        "yaw_rmse_deg": report.rmse_deg.yaw,
        "pitch_rmse_deg": report.rmse_deg.pitch,
        "roll_rmse_deg": report.rmse_deg.roll,
        "mean_fre_mm": report.mean_fre_mm,
        "mean_pointing_error_mm": report.mean_pointing_error_mm,
        "paper_fre_mm": report.paper_fre_mm,
        "report": a.out,
    }))
}

fn metrics_cmd(a: &MetricsArgs) -> Result<serde_json::Value, CliError> {
    input("ref", &a.reference)?;
    input("test", &a.test)?;
    if let Some(out) = &a.out {
        output_dir_ok("out", out)?;
    }
    let reference = read_ppm(&a.reference).map_err(fail)?;
    let test = read_ppm(&a.test).map_err(fail)?;
    let report = evaluate(&reference, &test).map_err(fail)?;
    if let Some(out) = &a.out {
        write_json(out, &report).map_err(fail)?;
    }
    Ok(json!({ "command": "metrics", "psnr_db": report.psnr_db, "ssim": report.ssim }))
}
