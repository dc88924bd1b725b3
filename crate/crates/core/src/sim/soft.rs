use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use super::hard::{SimError, Simulation};
use super::scene::{analytic_sdf, SceneSpec};
use crate::data::{radial_step, tangent_frame, TransientVolume, Vec3, WallGrid};
use crate::render::{density_from_sdf, direction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftOptions {
    pub angles: usize,
    /// Radial quadrature steps per bin.
    pub substeps: usize,
    pub bin_offset: usize,
}

impl Default for SoftOptions {
    fn default() -> Self {
        Self {
            angles: 256,
            substeps: 16,
            bin_offset: 0,
        }
    }
}

fn soft_point(
    scene: &SceneSpec,
    wall_point: &Vec3,
    normal: &Vec3,
    bins: usize,
    step: f64,
    alpha: f64,
    opts: &SoftOptions,
) -> Vec<f64> {
    let frame = tangent_frame(normal);
    let n = opts.angles;
    let k = opts.substeps;
    let dth = FRAC_PI_2 / n as f64;
    let dph = 2.0 * PI / n as f64;
    let h = step / k as f64;
    let start = opts.bin_offset as f64 * step;
    let mut tau = vec![0.0; bins];
    for i in 0..n {
        let th = (i as f64 + 0.5) * dth;
        let cell = th.sin() * dth * dph;
        for j in 0..n {
            let d = direction(&frame, th, (j as f64 + 0.5) * dph);
            let mut trans = 1.0;
            for (t, slot) in tau.iter_mut().enumerate() {
                for s in 0..k {
                    let r = start + (t * k + s) as f64 * h + 0.5 * h;
                    let p = wall_point + d * r;
                    let sigma = density_from_sdf(analytic_sdf(scene, &p), alpha);
                    let next = trans * (-sigma * h).exp();
                    *slot += scene.albedo_at(&p) * cell / (r * r) * (trans - next);
                    trans = next;
                }
                if trans < 1e-12 {
                    break;
                }
            }
        }
    }
    tau
}

/// Volumetric version of the forward model: the scene's analytic SDF is
/// turned into density with sharpness `alpha`, and the per-bin transient is
/// integrated with `angles^2` directions and `substeps` exact absorption
/// steps per bin. Used as an independent quadrature of the rendering
/// integral.
pub fn simulate_transients_soft(
    scene: &SceneSpec,
    wall: &WallGrid,
    bins: usize,
    bin_width_ps: f64,
    alpha: f64,
    opts: &SoftOptions,
) -> Result<Simulation, SimError> {
    if opts.angles == 0 || opts.substeps == 0 || !(alpha > 0.0) {
        return Err(SimError::Invalid("angles, substeps and alpha must be positive".into()));
    }
    let step = radial_step(bin_width_ps * 1e-12);
    let normal = wall.normal();
    let data: Vec<f32> = (0..wall.len())
        .into_par_iter()
        .map(|m| soft_point(scene, &wall.position(m), &normal, bins, step, alpha, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .flat_map(|v| v.into_iter().map(|x| x as f32))
        .collect();
    let volume = TransientVolume::with_offset(data, bins, bin_width_ps, opts.bin_offset, wall.clone())?;
    Ok(Simulation { volume, clipped: 0 })
}

/// Double-precision soft transient of a single wall point.
pub fn soft_transient(
    scene: &SceneSpec,
    wall_point: &Vec3,
    normal: &Vec3,
    bins: usize,
    bin_width_ps: f64,
    alpha: f64,
    opts: &SoftOptions,
) -> Vec<f64> {
    soft_point(
        scene,
        wall_point,
        normal,
        bins,
        radial_step(bin_width_ps * 1e-12),
        alpha,
        opts,
    )
}
