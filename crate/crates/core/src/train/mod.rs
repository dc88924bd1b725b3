//! Optimization loop: batching, Adam updates, checkpoints and diagnostics.

mod checkpoint;
mod step;

use std::io;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use step::{evaluate_step, StepContext, StepOutput, StepPlan, WallSamples};

use crate::autodiff::TapeError;
use crate::carving::CarveGrid;
use crate::data::{Config, ConfigError, Precision, TransientVolume};
use crate::fields::{FieldError, NeuralScene};
use crate::losses::{LossBreakdown, LossError, LossLog};
use crate::optim::{clip_global_norm, Adam, OptimError};
use crate::render::RenderError;

/// File name of the rolling checkpoint inside a checkpoint directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.nlck";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("carve grid bounds {carve:?} differ from scene bounds {scene:?}")]
    BoundsMismatch { carve: [[f64; 3]; 2], scene: [[f64; 3]; 2] },
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged {
        iteration: u64,
        detail: String,
        /// Most recent checkpoint written before the divergence.
        last_good: Option<PathBuf>,
    },
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        matches!(
            self,
            TrainError::Tape(TapeError::NonFinite { .. })
                | TrainError::Render(RenderError::NonFinite { .. })
                | TrainError::Loss(LossError::Tape(TapeError::NonFinite { .. }))
        )
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// Zero-based index of the iteration just run.
    pub iteration: u64,
    pub breakdown: LossBreakdown,
    /// Sharpness used during the iteration (before the update).
    pub alpha: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// CSV loss log; appended to when resuming.
    pub log: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Emit an info line every this many iterations (0 disables).
    pub progress_every: usize,
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub first: Option<LossBreakdown>,
    pub last: Option<LossBreakdown>,
    /// `(iteration, alpha)` for every iteration run.
    pub alpha: Vec<(u64, f64)>,
    pub skipped_steps: usize,
}

pub struct Trainer<'a> {
    cfg: &'a Config,
    tau: &'a TransientVolume,
    carve: &'a CarveGrid,
    scene: NeuralScene,
    adam: Adam,
    iteration: u64,
    free: Vec<usize>,
    mask_threshold: f64,
}

fn bounds_pair(b: &crate::data::SceneBounds) -> [[f64; 3]; 2] {
    [b.min, b.max]
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a Config, tau: &'a TransientVolume, carve: &'a CarveGrid) -> Result<Self, TrainError> {
        cfg.validate()?;
        let scene = NeuralScene::new(&cfg.network, *carve.bounds(), cfg.seed)?;
        let adam = Adam::from_config(scene.params.len(), &cfg.optimizer);
        Self::assemble(cfg, tau, carve, scene, adam, 0)
    }

    /// Continue from a checkpoint written under the same config.
    pub fn resume(
        cfg: &'a Config,
        tau: &'a TransientVolume,
        carve: &'a CarveGrid,
        ckpt: Checkpoint,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        ckpt.check_config(&cfg.hash())?;
        Self::assemble(cfg, tau, carve, ckpt.scene, ckpt.adam, ckpt.iteration)
    }

    fn assemble(
        cfg: &'a Config,
        tau: &'a TransientVolume,
        carve: &'a CarveGrid,
        scene: NeuralScene,
        adam: Adam,
        iteration: u64,
    ) -> Result<Self, TrainError> {
        if scene.bounds != *carve.bounds() {
            return Err(TrainError::BoundsMismatch {
                carve: bounds_pair(carve.bounds()),
                scene: bounds_pair(&scene.bounds),
            });
        }
        Ok(Self {
            cfg,
            tau,
            carve,
            scene,
            adam,
            iteration,
            free: carve.free_voxels(),
            mask_threshold: cfg.kappa * tau.max_value() as f64,
        })
    }

    pub fn scene(&self) -> &NeuralScene {
        &self.scene
    }

    pub fn into_scene(self) -> NeuralScene {
        self.scene
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn context(&self) -> StepContext<'a> {
        StepContext {
            cfg: self.cfg,
            tau: self.tau,
            carve: self.carve,
            mask_threshold: self.mask_threshold,
        }
    }

    pub fn plan(&self, iteration: u64) -> StepPlan {
        StepPlan::draw(self.cfg, self.tau, self.carve, &self.free, iteration)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.cfg.hash(),
            iteration: self.iteration,
            scene: self.scene.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Loss and gradient of `plan` at the current parameters.
    pub fn evaluate(&self, plan: &StepPlan) -> Result<StepOutput, TrainError> {
        let ctx = self.context();
        match self.cfg.precision {
            Precision::F32 => evaluate_step::<f32>(&ctx, &self.scene, plan),
            Precision::F64 => evaluate_step::<f64>(&ctx, &self.scene, plan),
        }
    }

    pub fn step(&mut self) -> Result<StepReport, TrainError> {
        let it = self.iteration;
        let alpha = self.scene.alpha_value();
        let plan = self.plan(it);
        let out = match self.evaluate(&plan) {
            Ok(o) => o,
            Err(e) if e.is_non_finite() => {
                return Err(TrainError::Diverged {
                    iteration: it,
                    detail: e.to_string(),
                    last_good: None,
                })
            }
            Err(e) => return Err(e),
        };
        if !out.breakdown.total.is_finite() {
            return Err(TrainError::Diverged {
                iteration: it,
                detail: format!("loss is {}", out.breakdown.total),
                last_good: None,
            });
        }
        let mut grads = out.grads;
        let grad_norm = clip_global_norm(&mut grads, self.cfg.optimizer.grad_clip);
        let skipped = match self.adam.update(self.scene.params.values_mut(), &grads) {
            Ok(()) => false,
            Err(OptimError::NonFinite(i)) => {
                warn!("iteration {it}: non-finite gradient at parameter {i}; step skipped");
                true
            }
            Err(e) => panic!("optimizer state does not match the parameters: {e}"),
        };
        self.iteration += 1;
        Ok(StepReport {
            iteration: it,
            breakdown: out.breakdown,
            alpha,
            grad_norm,
            skipped,
        })
    }

    /// Run until `until` iterations have completed.
    pub fn run(&mut self, until: u64, opts: &FitOptions) -> Result<FitReport, TrainError> {
        let mut log = match &opts.log {
            Some(p) if self.iteration > 0 => Some(LossLog::append(p)?),
            Some(p) => Some(LossLog::create(p)?),
            None => None,
        };
        let ckpt_path = opts.checkpoint_dir.as_ref().map(|d| d.join(CHECKPOINT_FILE));
        let mut last_good: Option<PathBuf> = None;
        let mut report = FitReport::default();
        while self.iteration < until {
            let r = match self.step() {
                Ok(r) => r,
                Err(TrainError::Diverged { iteration, detail, .. }) => {
                    if let Some(l) = log.as_mut() {
                        l.flush()?;
                    }
                    return Err(TrainError::Diverged {
                        iteration,
                        detail,
                        last_good,
                    });
                }
                Err(e) => return Err(e),
            };
            if let Some(l) = log.as_mut() {
                l.row(r.iteration, &r.breakdown, r.alpha)?;
            }
            if opts.progress_every > 0 && r.iteration % opts.progress_every as u64 == 0 {
                let b = &r.breakdown;
                info!(
                    "iter {} total {:.4e} tau {:.4e} eik {:.3e} zero {:.3e} ent {:.3e} free {:.3e} alpha {:.4e}",
                    r.iteration, b.total, b.tau, b.eikonal, b.zero, b.entropy, b.free, r.alpha
                );
            }
            report.first.get_or_insert(r.breakdown);
            report.last = Some(r.breakdown);
            report.alpha.push((r.iteration, r.alpha));
            report.skipped_steps += r.skipped as usize;
            let every = self.cfg.checkpoint_every as u64;
            if let Some(p) = &ckpt_path {
                if every > 0 && (self.iteration % every == 0 || self.iteration == until) {
                    self.checkpoint().save(p)?;
                    last_good = Some(p.clone());
                }
            }
        }
        if let Some(l) = log.as_mut() {
            l.flush()?;
        }
        Ok(report)
    }
}

/// Train from scratch for `cfg.iterations` iterations.
pub fn fit(
    cfg: &Config,
    tau: &TransientVolume,
    carve: &CarveGrid,
    opts: &FitOptions,
) -> Result<(NeuralScene, FitReport), TrainError> {
    let mut t = Trainer::new(cfg, tau, carve)?;
    let report = t.run(cfg.iterations as u64, opts)?;
    Ok((t.into_scene(), report))
}

/// Load a checkpoint from a directory or file path.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    if path.is_dir() {
        Checkpoint::load(path.join(CHECKPOINT_FILE))
    } else {
        Checkpoint::load(path)
    }
}
