use std::f64::consts::{FRAC_PI_2, PI};

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use super::scene::{Hit, SceneSpec};
use crate::data::{radial_step, tangent_frame, DataError, TransientVolume, Vec3, WallGrid};
use crate::render::direction;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Quadrature cells along each of elevation and azimuth.
    pub angles: usize,
    /// Per-axis split of cells that straddle a silhouette or edge, applied
    /// recursively.
    pub supersample: usize,
    pub bin_offset: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            angles: 256,
            supersample: 4,
            bin_offset: 0,
        }
    }
}

/// Simulated volume plus the number of surface samples that fell outside the
/// bin range.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub volume: TransientVolume,
    pub clipped: usize,
}

/// Which hits deposit energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Deposit {
    Objects,
    FloorOnly,
}

/// CDF at `x` of `u a + v b` for independent `u, v ~ U[-1/2, 1/2]`.
fn trapezoid_cdf(x: f64, a: f64, b: f64) -> f64 {
    let (lo, hi) = if a.abs() < b.abs() {
        (a.abs(), b.abs())
    } else {
        (b.abs(), a.abs())
    };
    let s = x + 0.5 * (lo + hi);
    if hi < 1e-300 {
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    if lo < 1e-9 * hi {
        return (s / hi).clamp(0.0, 1.0);
    }
    let g = |s: f64| {
        let s = s.max(0.0);
        0.5 * s * s
    };
    ((g(s) - g(s - lo) - g(s - hi) + g(s - lo - hi)) / (lo * hi)).clamp(0.0, 1.0)
}

struct Accumulator {
    tau: Vec<f64>,
    step: f64,
    offset: usize,
    clipped: usize,
}

impl Accumulator {
    fn point(&mut self, r: f64, w: f64) {
        let g = (r / self.step).floor() as usize;
        match g.checked_sub(self.offset) {
            Some(t) if t < self.tau.len() => self.tau[t] += w,
            _ => self.clipped += 1,
        }
    }

    fn spread(&mut self, r0: f64, a: f64, b: f64, w: f64) {
        let half = 0.5 * (a.abs() + b.abs());
        let g0 = ((r0 - half) / self.step).floor().max(0.0) as usize;
        let g1 = ((r0 + half) / self.step).floor() as usize;
        let mut prev = trapezoid_cdf(g0 as f64 * self.step - r0, a, b);
        for g in g0..=g1 {
            let next = trapezoid_cdf((g + 1) as f64 * self.step - r0, a, b);
            let share = w * (next - prev);
            prev = next;
            if share == 0.0 {
                continue;
            }
            match g.checked_sub(self.offset) {
                Some(t) if t < self.tau.len() => self.tau[t] += share,
                _ => self.clipped += 1,
            }
        }
    }
}

/// Hard-surface transient of one wall point.
pub(crate) fn simulate_point(
    scene: &SceneSpec,
    wall_point: &Vec3,
    normal: &Vec3,
    bins: usize,
    step: f64,
    opts: &SimOptions,
    deposit: Deposit,
) -> (Vec<f64>, usize) {
    let frame = tangent_frame(normal);
    let n = opts.angles;
    let dth = FRAC_PI_2 / n as f64;
    let dph = 2.0 * PI / n as f64;
    let with_floor = deposit == Deposit::FloorOnly;
    let cast =
        |th: f64, ph: f64| -> Option<Hit> { scene.intersect(wall_point, &direction(&frame, th, ph), with_floor) };
    let counts = |h: &Hit| match deposit {
        Deposit::Objects => true,
        Deposit::FloorOnly => scene.is_floor_surface(h.surface),
    };
    let mut acc = Accumulator {
        tau: vec![0.0; bins],
        step,
        offset: opts.bin_offset,
        clipped: 0,
    };
    let s = opts.supersample.max(1);
    for i in 0..n {
        let th = (i as f64 + 0.5) * dth;
        for j in 0..n {
            let ph = (j as f64 + 0.5) * dph;
            let cell = Cell { th, ph, dth, dph };
            integrate_cell(&cast, &counts, &mut acc, cell, s, EDGE_LEVELS);
        }
    }
    (acc.tau, acc.clipped)
}

/// Subdivision levels applied to quadrature cells that straddle an edge.
const EDGE_LEVELS: usize = 2;

#[derive(Clone, Copy)]
struct Cell {
    th: f64,
    ph: f64,
    dth: f64,
    dph: f64,
}

const CORNERS: [(f64, f64); 4] = [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)];

/// Deposit one angular cell. A cell whose centre and corners see the same
/// surface, and whose radii span at most one bin, spreads its weight over the
/// radii it covers; any other cell is split `s x s` and its children handled
/// the same way, down to `levels` levels. At the last level smooth cells
/// spread regardless of their span and edge cells deposit at their centre.
fn integrate_cell(
    cast: &impl Fn(f64, f64) -> Option<Hit>,
    counts: &impl Fn(&Hit) -> bool,
    acc: &mut Accumulator,
    c: Cell,
    s: usize,
    levels: usize,
) {
    let e = 1e-3;
    let center = cast(c.th, c.ph);
    let smooth = center.and_then(|h| {
        let same = |x: Option<Hit>| x.filter(|x| x.surface == h.surface);
        for (si, sj) in CORNERS {
            same(cast(c.th + si * c.dth, c.ph + sj * c.dph))?;
        }
        let tp = same(cast(c.th + e * c.dth, c.ph))?.r;
        let tm = same(cast(c.th - e * c.dth, c.ph))?.r;
        let pp = same(cast(c.th, c.ph + e * c.dph))?.r;
        let pm = same(cast(c.th, c.ph - e * c.dph))?.r;
        Some((h, (tp - tm) / (2.0 * e), (pp - pm) / (2.0 * e)))
    });
    let split = levels > 1 && s > 1;
    if let Some((h, a, b)) = smooth.filter(|(_, a, b)| !split || a.abs() + b.abs() <= acc.step) {
        if counts(&h) {
            let w = h.albedo * c.th.sin() / (h.r * h.r) * c.dth * c.dph;
            acc.spread(h.r, a, b, w);
        }
        return;
    }
    let touches = smooth.is_some()
        || center.is_some()
        || CORNERS
            .iter()
            .any(|(si, sj)| cast(c.th + si * c.dth, c.ph + sj * c.dph).is_some());
    if !touches {
        return;
    }
    let (dth, dph) = (c.dth / s as f64, c.dph / s as f64);
    for a in 0..s {
        let th = c.th + ((a as f64 + 0.5) / s as f64 - 0.5) * c.dth;
        for b in 0..s {
            let ph = c.ph + ((b as f64 + 0.5) / s as f64 - 0.5) * c.dph;
            if split {
                integrate_cell(cast, counts, acc, Cell { th, ph, dth, dph }, s, levels - 1);
            } else if let Some(h) = cast(th, ph).filter(counts) {
                acc.point(h.r, h.albedo * th.sin() / (h.r * h.r) * dth * dph);
            }
        }
    }
}

pub(crate) fn simulate_with(
    scene: &SceneSpec,
    wall: &WallGrid,
    bins: usize,
    bin_width_ps: f64,
    opts: &SimOptions,
    deposit: Deposit,
) -> Result<Simulation, SimError> {
    if opts.angles == 0 {
        return Err(SimError::Invalid("angular resolution must be >= 1".into()));
    }
    let step = radial_step(bin_width_ps * 1e-12);
    let normal = wall.normal();
    let per_point: Vec<(Vec<f64>, usize)> = (0..wall.len())
        .into_par_iter()
        .map(|m| simulate_point(scene, &wall.position(m), &normal, bins, step, opts, deposit))
        .collect();
    let clipped = per_point.iter().map(|p| p.1).sum();
    if clipped > 0 {
        warn!("{clipped} surface samples fell outside the {bins} simulated bins");
    }
    let data = per_point
        .into_iter()
        .flat_map(|(tau, _)| tau.into_iter().map(|v| v as f32))
        .collect();
    let volume = TransientVolume::with_offset(data, bins, bin_width_ps, opts.bin_offset, wall.clone())?;
    Ok(Simulation { volume, clipped })
}

/// Confocal transients of the scene's object primitives (first-surface
/// visibility, no interreflection): every visible surface element adds
/// `albedo sin(theta) / r^2 dtheta dphi` to the bin containing its radius.
/// Smooth quadrature cells spread their weight over the exact radial range
/// the cell covers; cells crossing an edge are supersampled.
pub fn simulate_transients(
    scene: &SceneSpec,
    wall: &WallGrid,
    bins: usize,
    bin_width_ps: f64,
    opts: &SimOptions,
) -> Result<Simulation, SimError> {
    simulate_with(scene, wall, bins, bin_width_ps, opts, Deposit::Objects)
}
