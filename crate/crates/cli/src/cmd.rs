use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

use nlos_core::carving::{carve, carving_spheres, CarveGrid, DetectorConfig};
use nlos_core::data::{load_transients, save_transients, Config, SceneBounds, TransientVolume, Vec3, WallGrid};
use nlos_core::extract::{
    analytic_depth, analytic_normal, cloud_from_view, evaluate_depth, evaluate_normals, object_mask_from_albedo,
    trace_view, DepthErrors, DepthMap, OrientedPointCloud, TraceOptions,
};
use nlos_core::image::Image;
use nlos_core::render::{render_view, Camera};
use nlos_core::sim::{add_background, add_noise, simulate_transients, SceneSpec, SimOptions};
use nlos_core::train::{load_checkpoint, FitOptions, TrainError, Trainer, CHECKPOINT_FILE};

use crate::args::{CarveArgs, Cli, Command, EvalArgs, ExtractArgs, RenderViewsArgs, SimulateArgs, TrainArgs};
use crate::manifest::{beside, Manifest};

/// Resolution of the carve grid built by `train` when none is given.
const DEFAULT_CARVE_RES: usize = 128;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

/// Data errors carry the offending path so the message is actionable.
fn data<E: Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn io_err<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Carve(a) => carve_cmd(&a),
        Command::Train(a) => train(&a),
        Command::Extract(a) => extract(&a),
        Command::Eval(a) => eval(&a),
        Command::RenderViews(a) => render_views(&a),
    }
}

fn unit(v: [f64; 3], flag: &str) -> Result<Vec3, CliError> {
    let v = Vec3::from(v);
    if !(v.norm() > 0.0) {
        return Err(CliError::Usage(format!("{flag} must be a non-zero vector")));
    }
    Ok(v.normalize())
}

fn bounds_from(b: [f64; 6]) -> Result<SceneBounds, CliError> {
    SceneBounds::new([b[0], b[1], b[2]], [b[3], b[4], b[5]]).map_err(|e| CliError::Usage(format!("--bounds: {e}")))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let scene = SceneSpec::load(&a.scene).map_err(data(&a.scene))?;
    if a.wall_res == 0 || !(a.wall_half > 0.0) {
        return Err(CliError::Usage("--wall-res and --wall-half must be positive".into()));
    }
    let wall = WallGrid::regular(
        Vec3::from(a.wall_center),
        unit(a.wall_normal, "--wall-normal")?,
        a.wall_half,
        a.wall_res,
        a.wall_res,
    );
    let opts = SimOptions {
        angles: a.angles,
        supersample: a.supersample,
        bin_offset: a.bin_offset,
    };
    let sim = simulate_transients(&scene, &wall, a.bins, a.bin_width_ps, &opts).map_err(data(&a.scene))?;
    if sim.clipped > 0 {
        warn!("{} surface samples fell outside the {} bins", sim.clipped, a.bins);
    }
    let mut outputs = vec![a.out.clone()];
    let mut tau = sim.volume;
    if scene.floor.is_some() {
        let mix = add_background(&tau, &scene, &opts).map_err(data(&a.scene))?;
        for (part, vol) in [(".object.nlt", &mix.object), (".background.nlt", &mix.background)] {
            let p = with_suffix(&a.out, part);
            save_transients(&p, vol).map_err(data(&p))?;
            outputs.push(p);
        }
        tau = mix.total;
    }
    let tau = add_noise(&tau, a.seed, a.noise).map_err(|e| CliError::Usage(e.to_string()))?;
    save_transients(&a.out, &tau).map_err(data(&a.out))?;
    let scene_out = with_suffix(&a.out, ".scene.json");
    scene.save(&scene_out).map_err(data(&scene_out))?;
    outputs.push(scene_out);
    let mut m = Manifest::new("simulate", a, a.seed);
    m.input(&a.scene).map_err(data(&a.scene))?;
    m.outputs = outputs;
    m.write(&beside(&a.out)).map_err(io_err)?;
    info!(
        "wrote {} ({} wall points, {} bins)",
        a.out.display(),
        tau.wall_points(),
        tau.bins()
    );
    Ok(())
}

fn carve_grid(tau: &TransientVolume, bounds: SceneBounds, res: usize, sigma: f64) -> Result<CarveGrid, CliError> {
    if res == 0 {
        return Err(CliError::Usage("carve resolution must be positive".into()));
    }
    let det = DetectorConfig {
        gaussian_sigma: sigma,
        ..Default::default()
    };
    let spheres = carving_spheres(tau, &det);
    Ok(carve(&spheres, CarveGrid::new(bounds, [res; 3])))
}

fn carve_cmd(a: &CarveArgs) -> Result<(), CliError> {
    let tau = load_transients(&a.transients).map_err(data(&a.transients))?;
    let bounds = match (a.bounds, &a.scene) {
        (Some(b), _) => bounds_from(b)?,
        (None, Some(p)) => SceneSpec::load(p)
            .map_err(data(p))?
            .bounds
            .ok_or_else(|| CliError::Data(format!("{}: scene has no bounds; pass --bounds", p.display())))?,
        (None, None) => return Err(CliError::Usage("carve needs --bounds or --scene".into())),
    };
    let grid = carve_grid(&tau, bounds, a.res, a.sigma)?;
    grid.save(&a.out).map_err(data(&a.out))?;
    let mut m = Manifest::new("carve", a, 0);
    m.input(&a.transients).map_err(data(&a.transients))?;
    if let Some(p) = &a.scene {
        m.input(p).map_err(data(p))?;
    }
    m.outputs = vec![a.out.clone()];
    m.write(&beside(&a.out)).map_err(io_err)?;
    info!(
        "{} of {} voxels are object",
        grid.object_mask().iter().filter(|&&b| b).count(),
        grid.len()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => Config::load(p).map_err(data(p))?,
        None => Config::default(),
    };
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.optimizer.lr = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tau = load_transients(&a.transients).map_err(data(&a.transients))?;
    fs::create_dir_all(&a.out).map_err(data(&a.out))?;
    let mut outputs = Vec::new();
    let grid = match (&a.carve, a.bounds) {
        (Some(p), _) => CarveGrid::load(p).map_err(data(p))?,
        (None, Some(b)) => {
            let g = carve_grid(
                &tau,
                bounds_from(b)?,
                DEFAULT_CARVE_RES,
                DetectorConfig::default().gaussian_sigma,
            )?;
            let p = a.out.join("carve.nlcg");
            g.save(&p).map_err(data(&p))?;
            outputs.push(p);
            g
        }
        (None, None) => {
            let sidecar = with_suffix(&a.transients, ".scene.json");
            let bounds = SceneSpec::load(&sidecar).ok().and_then(|s| s.bounds).ok_or_else(|| {
                CliError::Usage(format!(
                    "train needs --carve or --bounds (no scene with bounds at {})",
                    sidecar.display()
                ))
            })?;
            let g = carve_grid(
                &tau,
                bounds,
                DEFAULT_CARVE_RES,
                DetectorConfig::default().gaussian_sigma,
            )?;
            let p = a.out.join("carve.nlcg");
            g.save(&p).map_err(data(&p))?;
            outputs.push(p);
            g
        }
    };
    let cfg_path = a.out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(data(&cfg_path))?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let mut trainer = if a.resume {
        let ckpt = load_checkpoint(&ckpt_path).map_err(data(&ckpt_path))?;
        Trainer::resume(&cfg, &tau, &grid, ckpt).map_err(|e| train_error(e, &ckpt_path))?
    } else {
        Trainer::new(&cfg, &tau, &grid).map_err(|e| train_error(e, &a.out))?
    };
    let opts = FitOptions {
        log: Some(a.out.join("loss.csv")),
        checkpoint_dir: Some(a.out.clone()),
        progress_every: a.progress,
    };
    let report = trainer
        .run(cfg.iterations as u64, &opts)
        .map_err(|e| train_error(e, &a.out))?;
    if cfg.checkpoint_every == 0 {
        trainer.checkpoint().save(&ckpt_path).map_err(data(&ckpt_path))?;
    }
    outputs.extend([ckpt_path, a.out.join("loss.csv"), cfg_path]);
    let mut m = Manifest::new("train", a, cfg.seed);
    m.config = Some(serde_json::to_value(&cfg).expect("config serializes"));
    m.input(&a.transients).map_err(data(&a.transients))?;
    if let Some(p) = &a.carve {
        m.input(p).map_err(data(p))?;
    }
    if let Some(p) = &a.config {
        m.input(p).map_err(data(p))?;
    }
    m.outputs = outputs;
    m.write(&a.out.join("manifest.json")).map_err(io_err)?;
    if let Some(last) = report.last {
        println!(
            "iterations {} total {:e} tau {:e} alpha {:e}",
            trainer.iteration(),
            last.total,
            last.tau,
            trainer.scene().alpha_value()
        );
    }
    Ok(())
}

fn train_error(e: TrainError, path: &Path) -> CliError {
    match e {
        TrainError::Diverged {
            iteration,
            detail,
            last_good,
        } => CliError::Diverged(format!(
            "training diverged at iteration {iteration}: {detail}; {}",
            match last_good {
                Some(p) => format!("last good checkpoint is {}", p.display()),
                None => "no checkpoint was written before the divergence".into(),
            }
        )),
        TrainError::Config(c) => CliError::Usage(c.to_string()),
        other => CliError::Data(format!("{}: {other}", path.display())),
    }
}

fn trace_options(a: &ExtractArgs) -> TraceOptions {
    TraceOptions {
        max_steps: a.max_steps,
        hit_eps: a.hit_eps,
        damping: a.damping,
        ..Default::default()
    }
}

fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    if a.res == 0 || a.samples == 0 {
        return Err(CliError::Usage("--res and --samples must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint).map_err(data(&a.checkpoint))?;
    let scene = &ckpt.scene;
    let bounds = scene.bounds;
    let camera = Camera::wall_facing(&bounds, &unit(a.wall_normal, "--wall-normal")?, a.res, a.res);
    let albedo = render_view(scene, &camera, &bounds, a.samples).map_err(io_err)?;
    let mask = if a.no_mask {
        None
    } else {
        Some(object_mask_from_albedo(&albedo, a.mask_fraction).map_err(|e| CliError::Usage(e.to_string()))?)
    };
    if mask.as_ref().is_some_and(|m| m.is_empty()) {
        warn!("object mask is empty; the point cloud will be empty");
    }
    let field = scene.sdf_field();
    let view = trace_view(&field, &camera, &bounds, mask.as_ref(), &trace_options(a))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let cloud = cloud_from_view(&field, &view, a.normal_eps);
    let ply = with_suffix(&a.out, ".ply");
    let depth = with_suffix(&a.out, "_depth.pfm");
    let albedo_path = with_suffix(&a.out, "_albedo.pfm");
    let cam_path = with_suffix(&a.out, "_camera.json");
    cloud.write_ply(&ply).map_err(data(&ply))?;
    view.depth_map().depth.write_pfm(&depth).map_err(data(&depth))?;
    albedo.write_pfm(&albedo_path).map_err(data(&albedo_path))?;
    let mut outputs = vec![ply, depth, albedo_path];
    if let Some(m) = &mask {
        let p = with_suffix(&a.out, "_mask.pgm");
        fs::write(&p, m.to_image().to_pgm16(1.0)).map_err(data(&p))?;
        outputs.push(p);
    }
    fs::write(
        &cam_path,
        serde_json::to_string_pretty(&camera).expect("camera serializes"),
    )
    .map_err(data(&cam_path))?;
    outputs.push(cam_path);
    let mut m = Manifest::new("extract", a, 0);
    let ckpt_file = if a.checkpoint.is_dir() {
        a.checkpoint.join(CHECKPOINT_FILE)
    } else {
        a.checkpoint.clone()
    };
    m.input(&ckpt_file).map_err(data(&ckpt_file))?;
    m.outputs = outputs;
    m.write(&with_suffix(&a.out, ".manifest.json")).map_err(io_err)?;
    info!("{} points extracted", cloud.len());
    Ok(())
}

fn read_depth(path: &Path, camera: Option<Camera>) -> Result<DepthMap, CliError> {
    let depth = Image::read_pfm(path).map_err(data(path))?;
    let camera = camera.unwrap_or(Camera::wall_facing(
        &SceneBounds::cube(Vec3::zeros(), 1.0),
        &Vec3::z(),
        depth.width,
        depth.height,
    ));
    Ok(DepthMap { camera, depth })
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let camera: Option<Camera> = match &a.camera {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(data(p))?;
            Some(serde_json::from_str(&text).map_err(data(p))?)
        }
        None => None,
    };
    let pred = read_depth(&a.pred_depth, camera)?;
    let scene = match &a.scene {
        Some(p) => Some(SceneSpec::load(p).map_err(data(p))?),
        None => None,
    };
    let gt = match (&a.gt_depth, &scene, camera) {
        (Some(p), _, _) => read_depth(p, camera)?,
        (None, Some(s), Some(c)) => {
            if c.width != pred.width() || c.height != pred.height() {
                return Err(CliError::Data(format!(
                    "camera is {}x{} but the predicted depth is {}x{}",
                    c.width,
                    c.height,
                    pred.width(),
                    pred.height()
                )));
            }
            analytic_depth(s, &c)
        }
        _ => return Err(CliError::Usage("eval needs --gt-depth or --scene with --camera".into())),
    };
    let depth: DepthErrors = evaluate_depth(&pred, &gt).map_err(|e| CliError::Data(e.to_string()))?;
    let mut csv = format!("{}\n{}\n", DepthErrors::CSV_HEADER, depth.csv_row());
    if let (Some(p), Some(s)) = (&a.cloud, &scene) {
        let cloud = OrientedPointCloud::read_ply(p).map_err(data(p))?;
        // Reference normal: the analytic normal at the predicted point.
        let gt: Vec<Vec3> = cloud.points.iter().map(|q| analytic_normal(s, q)).collect();
        let normals: Vec<Vec3> = cloud.normals.iter().map(|n| n.normalize()).collect();
        let e = evaluate_normals(&normals, &gt, &vec![true; gt.len()]).map_err(data(p))?;
        csv.push_str(&e.csv_row());
        csv.push('\n');
        csv.push_str(&format!("normal_angle_deg,{},,{},\n", e.mean_angle_deg, e.count));
    }
    match &a.out {
        Some(p) => {
            fs::write(p, &csv).map_err(data(p))?;
            let mut m = Manifest::new("eval", a, 0);
            m.input(&a.pred_depth).map_err(data(&a.pred_depth))?;
            for p in [&a.gt_depth, &a.scene, &a.camera, &a.cloud].into_iter().flatten() {
                m.input(p).map_err(data(p))?;
            }
            m.outputs = vec![p.clone()];
            m.write(&beside(p)).map_err(io_err)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn render_views(a: &RenderViewsArgs) -> Result<(), CliError> {
    if a.views == 0 || a.res == 0 || a.samples == 0 {
        return Err(CliError::Usage("--views, --res and --samples must be positive".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint).map_err(data(&a.checkpoint))?;
    let scene = &ckpt.scene;
    let normal = unit(a.wall_normal, "--wall-normal")?;
    fs::create_dir_all(&a.out_dir).map_err(data(&a.out_dir))?;
    let mut images = Vec::with_capacity(a.views);
    for k in 0..a.views {
        let az = if a.views == 1 {
            0.0
        } else {
            -a.azimuth_span + 2.0 * a.azimuth_span * k as f64 / (a.views - 1) as f64
        };
        let camera = Camera::orbit(&scene.bounds, &normal, az, a.elevation, a.res, a.res);
        images.push(render_view(scene, &camera, &scene.bounds, a.samples).map_err(io_err)?);
    }
    let peak = images.iter().map(Image::max_finite).fold(0.0, f64::max);
    let mut outputs = Vec::new();
    for (k, img) in images.iter().enumerate() {
        let pfm = a.out_dir.join(format!("view_{k:02}.pfm"));
        let pgm = a.out_dir.join(format!("view_{k:02}.pgm"));
        img.write_pfm(&pfm).map_err(data(&pfm))?;
        fs::write(&pgm, img.to_pgm16(peak)).map_err(data(&pgm))?;
        outputs.extend([pfm, pgm]);
    }
    let mut m = Manifest::new("render-views", a, 0);
    let ckpt_file = if a.checkpoint.is_dir() {
        a.checkpoint.join(CHECKPOINT_FILE)
    } else {
        a.checkpoint.clone()
    };
    m.input(&ckpt_file).map_err(data(&ckpt_file))?;
    m.outputs = outputs;
    m.write(&a.out_dir.join("manifest.json")).map_err(io_err)?;
    Ok(())
}
