use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Neural SDF surface reconstruction from confocal NLOS transients.
///
/// Flags override values read from `--config`; seeds default to 0 and are
/// recorded in the manifest written next to every output.
#[derive(Debug, Parser)]
#[command(name = "nlos", version)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate confocal transients of an analytic scene.
    Simulate(SimulateArgs),
    /// Carve free space from measured transients.
    Carve(CarveArgs),
    /// Fit the neural scene to transients.
    Train(TrainArgs),
    /// Sphere-trace a trained model into a point cloud and depth map.
    Extract(ExtractArgs),
    /// Compare extracted geometry with a reference.
    Eval(EvalArgs),
    /// Render directional-albedo images from orbiting cameras.
    RenderViews(RenderViewsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scene description (JSON).
    #[arg(long)]
    pub scene: PathBuf,
    /// Output `.nlt` file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    #[arg(long, default_value_t = 70.0)]
    pub bin_width_ps: f64,
    /// Bins skipped before the first stored bin.
    #[arg(long, default_value_t = 0)]
    pub bin_offset: usize,
    /// Scan points per side of the square wall grid.
    #[arg(long, default_value_t = 16)]
    pub wall_res: usize,
    /// Half side length of the wall grid in metres.
    #[arg(long, default_value_t = 0.5)]
    pub wall_half: f64,
    #[arg(long, default_value = "0,0,0", value_parser = parse_vec3)]
    pub wall_center: [f64; 3],
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    pub wall_normal: [f64; 3],
    /// Quadrature cells per angular axis.
    #[arg(long, default_value_t = 256)]
    pub angles: usize,
    #[arg(long, default_value_t = 4)]
    pub supersample: usize,
    /// Signal carried by one photon for Poisson noise (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct CarveArgs {
    #[arg(long)]
    pub transients: PathBuf,
    /// Output carve grid.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene bounds `minx,miny,minz,maxx,maxy,maxz`; taken from `--scene`
    /// when omitted.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<[f64; 6]>,
    /// Scene description whose `bounds` field is used.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Voxels per axis.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Gaussian smoothing of the first-photon detector, in bins.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub transients: PathBuf,
    /// Carve grid. When omitted the transients are carved at 128^3 inside
    /// `--bounds`, or inside the bounds of the `<transients>.scene.json`
    /// written by `simulate`, and the grid is saved in the output directory.
    #[arg(long)]
    pub carve: Option<PathBuf>,
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<[f64; 6]>,
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the checkpoint, loss log and manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Log progress every this many iterations (0 disables).
    #[arg(long, default_value_t = 100)]
    pub progress: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// Checkpoint file or training output directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output prefix: writes `<out>.ply`, `<out>_depth.pfm`,
    /// `<out>_albedo.pfm`, `<out>_mask.pgm` and `<out>_camera.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    pub wall_normal: [f64; 3],
    /// Object mask threshold as a fraction of the peak albedo.
    #[arg(long, default_value_t = 0.1)]
    pub mask_fraction: f64,
    /// Trace every pixel instead of the albedo mask.
    #[arg(long)]
    pub no_mask: bool,
    /// Volume-rendering samples per pixel for the albedo image.
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub hit_eps: f64,
    #[arg(long, default_value_t = 256)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0.9)]
    pub damping: f64,
    /// Finite-difference step of the normals.
    #[arg(long, default_value_t = 1e-4)]
    pub normal_eps: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Predicted depth map (PFM).
    #[arg(long)]
    pub pred_depth: PathBuf,
    /// Reference depth map (PFM).
    #[arg(long, conflicts_with = "scene")]
    pub gt_depth: Option<PathBuf>,
    /// Analytic scene; the reference is rendered with `--camera`.
    #[arg(long, requires = "camera")]
    pub scene: Option<PathBuf>,
    /// Camera written by `extract`.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Point cloud whose normals are compared with the scene's.
    #[arg(long, requires = "scene")]
    pub cloud: Option<PathBuf>,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderViewsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Azimuths span `[-span, span]` degrees around the wall normal.
    #[arg(long, default_value_t = 45.0)]
    pub azimuth_span: f64,
    #[arg(long, default_value_t = 15.0)]
    pub elevation: f64,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[arg(long, default_value_t = 128)]
    pub samples: usize,
    #[arg(long, default_value = "0,0,1", value_parser = parse_vec3)]
    pub wall_normal: [f64; 3],
}

fn parse_floats(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(v)
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

pub fn parse_bounds(s: &str) -> Result<[f64; 6], String> {
    let v = parse_floats(s, 6)?;
    Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
}
