use std::ops::Range;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TrainError;
use crate::autodiff::{NodeId, Real, Tape};
use crate::carving::CarveGrid;
use crate::data::{Config, TransientVolume, Vec3, ZeroLossNorm};
use crate::fields::NeuralScene;
use crate::losses::{
    eikonal_tape, entropy_tape, free_space_tape, sample_free_voxels, sample_surface_cells, squared_error_tape,
    uniform_points, zero_tape, LossBreakdown,
};
use crate::render::{
    composite_background_tape, render_transient, RadialBins, RenderOptions, SphereSampleGrid, TapeField,
};

/// Surface points drawn for one wall point and the mask that selected their
/// scan spheres.
#[derive(Clone, Debug, PartialEq)]
pub struct WallSamples {
    pub mask: Vec<bool>,
    pub points: Vec<Vec3>,
}

/// Every random choice of one iteration.
///
/// With `frozen` set, the on-policy surface samples and masks are replayed
/// instead of drawn, which makes the objective a smooth function of the
/// parameters (used for finite-difference checks).
#[derive(Clone, Debug)]
pub struct StepPlan {
    pub wall: Vec<usize>,
    pub grid: SphereSampleGrid,
    pub eikonal_points: Vec<Vec3>,
    pub free_voxels: Vec<usize>,
    pub surface_seed: u64,
    pub frozen: Option<Vec<WallSamples>>,
}

impl StepPlan {
    /// Draw the plan of iteration `iteration`; depends only on the seed and
    /// the iteration number.
    pub fn draw(cfg: &Config, tau: &TransientVolume, carve: &CarveGrid, free: &[usize], iteration: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iteration);
        let m = tau.wall_points();
        let wall = index::sample(&mut rng, m, cfg.batch_size.min(m)).into_vec();
        let s = &cfg.sampling;
        let grid = if s.jitter {
            SphereSampleGrid::jittered(s.theta, s.phi, &mut rng)
        } else {
            SphereSampleGrid::uniform(s.theta, s.phi)
        };
        let eikonal_points = uniform_points(carve.bounds(), s.eikonal_points, &mut rng);
        let free_voxels = sample_free_voxels(carve, free, s.free_points, &mut rng);
        Self {
            wall,
            grid,
            eikonal_points,
            free_voxels,
            surface_seed: rng.gen(),
            frozen: None,
        }
    }
}

/// Result of evaluating one plan.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    /// Gradient of the weighted total with respect to every parameter.
    pub grads: Vec<f64>,
    pub samples: Vec<WallSamples>,
    /// Background scale per batch wall point (0 without background).
    pub xi: Vec<f64>,
}

/// Inputs shared by every worker of a step.
pub struct StepContext<'a> {
    pub cfg: &'a Config,
    pub tau: &'a TransientVolume,
    pub carve: &'a CarveGrid,
    /// Absolute mask threshold on the object transient.
    pub mask_threshold: f64,
}

impl StepContext<'_> {
    fn bins(&self, m: usize) -> Range<usize> {
        let b = self.tau.bins();
        let Some(margin) = self.cfg.sampling.bin_margin else {
            return 0..b;
        };
        let row = self.tau.transient(m);
        match (row.iter().position(|&v| v > 0.0), row.iter().rposition(|&v| v > 0.0)) {
            (Some(lo), Some(hi)) => lo.saturating_sub(margin)..(hi + 1 + margin).min(b),
            _ => 0..b,
        }
    }
}

struct WallForward<F> {
    tape: Tape<F>,
    sq: NodeId,
    entropy: NodeId,
    zero: Option<NodeId>,
    masked: usize,
    xi: f64,
    samples: WallSamples,
}

fn forward_wall<F: Real>(
    ctx: &StepContext,
    scene: &NeuralScene,
    plan: &StepPlan,
    slot: usize,
) -> Result<WallForward<F>, TrainError> {
    let m = plan.wall[slot];
    let cfg = ctx.cfg;
    let nb = ctx.tau.bins();
    let mut tape = Tape::<F>::new();
    let bound = scene.bind(&mut tape)?;
    let window = ctx.bins(m);
    let radial = RadialBins::from_volume(ctx.tau, m, window.clone())?;
    let opts = RenderOptions {
        weight_mode: cfg.weight_mode,
        bounds: Some(*ctx.carve.bounds()),
    };
    let r = render_transient(&mut tape, &bound, &radial, &plan.grid, &opts)?;
    let measured: Vec<f64> = ctx.tau.transient(m).iter().map(|&v| v as f64).collect();
    let tau_o = if window == (0..nb) {
        r.tau_o
    } else {
        let idx: Vec<usize> = window.clone().collect();
        tape.scatter_add(r.tau_o, idx.into(), nb)?
    };
    let (rendered, mask_signal, xi) = if cfg.background {
        let denom = nb.saturating_sub(1).max(1) as f64;
        let t_norm: Vec<f64> = (0..nb).map(|t| t as f64 / denom).collect();
        let wall_point = ctx.tau.wall().position(m);
        let tau_b = scene
            .background
            .eval(&mut tape, &bound.background, &wall_point, &t_norm)?;
        let (tau, xi) = composite_background_tape(&mut tape, tau_o, tau_b, &measured)?;
        let xi = tape.scalar_value(xi).to_f64();
        let tb = tape.value(tau_b);
        let signal: Vec<f64> = measured
            .iter()
            .zip(tb)
            .map(|(v, b)| v - xi * Real::to_f64(*b))
            .collect();
        (tau, signal, xi)
    } else {
        (tau_o, measured.clone(), 0.0)
    };
    let sq = squared_error_tape(&mut tape, rendered, &measured)?;
    let entropy = entropy_tape(&mut tape, r.opacity)?;

    let samples = match &plan.frozen {
        Some(f) => f[slot].clone(),
        None => {
            let mask: Vec<bool> = mask_signal.iter().map(|&v| v > ctx.mask_threshold).collect();
            let mut points = Vec::new();
            if let Some(rho) = r.reflectance {
                let mut rng = ChaCha8Rng::seed_from_u64(plan.surface_seed);
                rng.set_stream(m as u64);
                let w = tape.value(r.weights);
                let rho = tape.value(rho);
                let mut by_bin: Vec<Vec<usize>> = vec![Vec::new(); window.len()];
                for (s, &b) in r.layout.bin.iter().enumerate() {
                    by_bin[b].push(s);
                }
                for (local, t) in window.clone().enumerate() {
                    if !mask[t] || by_bin[local].is_empty() {
                        continue;
                    }
                    let pdf: Vec<f64> = by_bin[local].iter().map(|&s| w[s].to_f64() * rho[s].to_f64()).collect();
                    if let Some(cells) = sample_surface_cells(&pdf, cfg.sampling.n_z, &mut rng) {
                        points.extend(cells.into_iter().map(|c| r.layout.points[by_bin[local][c]]));
                    }
                }
            }
            WallSamples { mask, points }
        }
    };
    let masked = samples.mask.iter().filter(|&&b| b).count();
    let zero = if samples.points.is_empty() {
        None
    } else {
        let d = TapeField::<F>::sdf(&bound, &mut tape, &samples.points)?;
        Some(zero_tape(&mut tape, d, 1)?)
    };
    Ok(WallForward {
        tape,
        sq,
        entropy,
        zero,
        masked,
        xi,
        samples,
    })
}

struct Partial {
    grads: Vec<f64>,
    values: [f64; 5],
}

fn backward_into<F: Real>(tape: &Tape<F>, out: NodeId, n: usize) -> Result<Vec<f64>, TrainError> {
    let mut grads = vec![0.0; n];
    let g = tape.backward(out)?;
    g.accumulate_params(tape, &mut grads);
    Ok(grads)
}

fn regularizers<F: Real>(ctx: &StepContext, scene: &NeuralScene, plan: &StepPlan) -> Result<Partial, TrainError> {
    let cfg = ctx.cfg;
    let mut tape = Tape::<F>::new();
    let bound = scene.bind(&mut tape)?;
    let eik = if plan.eikonal_points.is_empty() {
        tape.fixed(0.0)
    } else {
        eikonal_tape(&mut tape, &bound, &plan.eikonal_points, cfg.sampling.fd_step)?
    };
    let free = free_space_tape(&mut tape, &bound, ctx.carve, &plan.free_voxels)?;
    let a = tape.scale(eik, cfg.loss.eikonal)?;
    let b = tape.scale(free, cfg.loss.free)?;
    let total = tape.add(a, b)?;
    let mut values = [0.0; 5];
    values[1] = tape.scalar_value(eik).to_f64();
    values[4] = tape.scalar_value(free).to_f64();
    Ok(Partial {
        grads: backward_into(&tape, total, scene.params.len())?,
        values,
    })
}

/// Evaluate the weighted objective of `plan` and its parameter gradient.
///
/// Wall points run in parallel, each on its own tape; partial gradients are
/// summed in batch order so the result does not depend on scheduling.
pub fn evaluate_step<F: Real>(
    ctx: &StepContext,
    scene: &NeuralScene,
    plan: &StepPlan,
) -> Result<StepOutput, TrainError> {
    let cfg = ctx.cfg;
    let nb = ctx.tau.bins();
    let batch = plan.wall.len();
    let (forwards, reg) = rayon::join(
        || {
            (0..batch)
                .into_par_iter()
                .map(|slot| forward_wall::<F>(ctx, scene, plan, slot))
                .collect::<Result<Vec<_>, _>>()
        },
        || regularizers::<F>(ctx, scene, plan),
    );
    let mut forwards = forwards?;
    let reg = reg?;

    let tau_norm = (batch * nb).max(1) as f64;
    let ent_norm = (batch * plan.grid.len()).max(1) as f64;
    let zero_norm = match cfg.zero_loss_norm {
        ZeroLossNorm::AllEntries => batch * nb * cfg.sampling.n_z,
        ZeroLossNorm::MaskedEntries => forwards.iter().map(|f| f.masked).sum::<usize>() * cfg.sampling.n_z,
    }
    .max(1) as f64;
    let w = cfg.loss;
    let n = scene.params.len();
    let partials = forwards
        .par_iter_mut()
        .map(|f| -> Result<Partial, TrainError> {
            let t = &mut f.tape;
            let mut values = [0.0; 5];
            values[0] = t.scalar_value(f.sq).to_f64() / tau_norm;
            values[3] = t.scalar_value(f.entropy).to_f64() / ent_norm;
            let a = t.scale(f.sq, w.tau / tau_norm)?;
            let b = t.scale(f.entropy, w.entropy / ent_norm)?;
            let mut total = t.add(a, b)?;
            if let Some(z) = f.zero {
                values[2] = t.scalar_value(z).to_f64() / zero_norm;
                let c = t.scale(z, w.zero / zero_norm)?;
                total = t.add(total, c)?;
            }
            Ok(Partial {
                grads: backward_into(t, total, n)?,
                values,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut grads = reg.grads;
    let mut comps = reg.values;
    for p in &partials {
        for (g, x) in grads.iter_mut().zip(&p.grads) {
            *g += x;
        }
        for k in [0, 2, 3] {
            comps[k] += p.values[k];
        }
    }
    let breakdown = LossBreakdown::new(comps, &cfg.loss)?;
    Ok(StepOutput {
        breakdown,
        grads,
        xi: forwards.iter().map(|f| f.xi).collect(),
        samples: forwards.into_iter().map(|f| f.samples).collect(),
    })
}
