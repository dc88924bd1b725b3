use ::log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{NodeId, Real, Tape, TapeError};
use crate::carving::CarveGrid;
use crate::data::{LossWeights, SceneBounds, Vec3};
use crate::fields::{sdf_grads, SdfField};
use crate::render::TapeField;

/// Clamp applied to accumulated weights before the entropy.
pub const ENTROPY_EPS: f64 = 1e-7;

/// Added to the squared gradient norm so its square root stays
/// differentiable at a vanishing gradient.
pub const GRAD_NORM_FLOOR: f64 = 1e-18;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("loss weight {name} is negative ({value})")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("loss weight {name} is not finite")]
    NonFiniteWeight { name: &'static str },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Mean squared error over all entries.
pub fn loss_tau(rendered: &[f64], measured: &[f64]) -> Result<f64, LossError> {
    if rendered.len() != measured.len() {
        return Err(LossError::Shape {
            expected: measured.len(),
            got: rendered.len(),
        });
    }
    if rendered.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = rendered.iter().zip(measured).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(s / rendered.len() as f64)
}

/// Sum of squared errors of a rendered transient against measured values;
/// the caller divides by the entry count of the whole batch.
pub fn squared_error_tape<F: Real>(
    tape: &mut Tape<F>,
    rendered: NodeId,
    measured: &[f64],
) -> Result<NodeId, LossError> {
    let (r, c) = tape.shape(rendered);
    if r * c != measured.len() {
        return Err(LossError::Shape {
            expected: measured.len(),
            got: r * c,
        });
    }
    let m = tape.fixed_column(measured);
    let diff = tape.sub(rendered, m)?;
    let sq = tape.square(diff)?;
    Ok(tape.sum(sq)?)
}

/// Draw `n` cell indices with probability proportional to `pdf`. `None` when
/// the weights have no positive mass.
pub fn sample_surface_cells(pdf: &[f64], n: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
    let total: f64 = pdf.iter().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let clean: Vec<f64> = pdf.iter().map(|&w| if w > 0.0 { w } else { 0.0 }).collect();
    let dist = WeightedIndex::new(&clean).ok()?;
    Some((0..n).map(|_| dist.sample(rng)).collect())
}

/// Points of a scan sphere drawn in proportion to `pdf`, one weight per
/// sphere point.
pub fn sample_surface_points(pdf: &[f64], points: &[Vec3], n: usize, rng: &mut impl Rng) -> Option<Vec<Vec3>> {
    assert_eq!(pdf.len(), points.len(), "one weight per sphere point");
    sample_surface_cells(pdf, n, rng).map(|idx| idx.into_iter().map(|i| points[i]).collect())
}

/// `sum m |d| / entries`.
pub fn loss_z(distances: &[f64], mask: &[f64], entries: usize) -> f64 {
    assert_eq!(distances.len(), mask.len());
    if entries == 0 {
        return 0.0;
    }
    distances.iter().zip(mask).map(|(d, m)| m * d.abs()).sum::<f64>() / entries as f64
}

/// Taped `sum |d| / entries` over already-masked surface points.
pub fn zero_tape<F: Real>(tape: &mut Tape<F>, distances: NodeId, entries: usize) -> Result<NodeId, LossError> {
    let a = tape.abs(distances)?;
    let s = tape.sum(a)?;
    Ok(tape.scale(s, 1.0 / entries.max(1) as f64)?)
}

/// Binary entropy in bits of `o` clamped to `[eps, 1 - eps]`.
pub fn binary_entropy(o: f64) -> f64 {
    let o = o.clamp(ENTROPY_EPS, 1.0 - ENTROPY_EPS);
    -(o * o.log2() + (1.0 - o) * (1.0 - o).log2())
}

pub fn loss_entropy(opacity: &[f64]) -> f64 {
    if opacity.is_empty() {
        return 0.0;
    }
    opacity.iter().map(|&o| binary_entropy(o)).sum::<f64>() / opacity.len() as f64
}

/// Taped sum of binary entropies of `opacity`; the caller divides by the
/// direction count of the batch.
pub fn entropy_tape<F: Real>(tape: &mut Tape<F>, opacity: NodeId) -> Result<NodeId, LossError> {
    let ln2 = std::f64::consts::LN_2;
    let o = tape.clamp(opacity, ENTROPY_EPS, 1.0 - ENTROPY_EPS)?;
    let lo = tape.log(o)?;
    let a = tape.mul(o, lo)?;
    let no = tape.neg(o)?;
    let q = tape.shift(no, 1.0)?;
    let lq = tape.log(q)?;
    let b = tape.mul(q, lq)?;
    let ab = tape.add(a, b)?;
    let s = tape.sum(ab)?;
    Ok(tape.scale(s, -1.0 / ln2)?)
}

/// Binary cross-entropy between accumulated weights and a silhouette mask.
/// Only used to study how the density sharpness responds to an explicit
/// mask; training never sees it.
pub fn mask_loss(opacity: &[f64], mask: &[bool]) -> f64 {
    assert_eq!(opacity.len(), mask.len());
    if opacity.is_empty() {
        return 0.0;
    }
    let s: f64 = opacity
        .iter()
        .zip(mask)
        .map(|(&o, &m)| {
            let o = o.clamp(ENTROPY_EPS, 1.0 - ENTROPY_EPS);
            if m {
                -o.ln()
            } else {
                -(1.0 - o).ln()
            }
        })
        .sum();
    s / opacity.len() as f64
}

pub fn uniform_points(bounds: &SceneBounds, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let lo = bounds.min_v();
    let e = bounds.extent();
    (0..n)
        .map(|_| lo + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z))
        .collect()
}

/// Mean of `(|grad d| - 1)^2` with central-difference gradients.
pub fn loss_eikonal(field: &dyn SdfField, points: &[Vec3], eps: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let g = sdf_grads(field, points, eps);
    g.iter()
        .map(|g| {
            let n = (g.norm_squared() + GRAD_NORM_FLOOR).sqrt();
            (n - 1.0) * (n - 1.0)
        })
        .sum::<f64>()
        / points.len() as f64
}

/// Taped eikonal term: the probes `p +- eps e_k` go through the field in a
/// single evaluation and the differences form the gradient.
pub fn eikonal_tape<F: Real>(
    tape: &mut Tape<F>,
    field: &dyn TapeField<F>,
    points: &[Vec3],
    eps: f64,
) -> Result<NodeId, LossError> {
    let n = points.len();
    let mut probes = Vec::with_capacity(6 * n);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut e = Vec3::zeros();
            e[axis] = sign * eps;
            probes.extend(points.iter().map(|p| p + e));
        }
    }
    let d = field.sdf(tape, &probes)?;
    let mut sq = None;
    for axis in 0..3 {
        let plus = tape.slice_rows(d, 2 * axis * n, n)?;
        let minus = tape.slice_rows(d, (2 * axis + 1) * n, n)?;
        let diff = tape.sub(plus, minus)?;
        let g = tape.scale(diff, 0.5 / eps)?;
        let g2 = tape.square(g)?;
        sq = Some(match sq {
            None => g2,
            Some(acc) => tape.add(acc, g2)?,
        });
    }
    let sq = tape.shift(sq.expect("three axes"), GRAD_NORM_FLOOR)?;
    let norm = tape.sqrt(sq)?;
    let dev = tape.shift(norm, -1.0)?;
    let dev2 = tape.square(dev)?;
    Ok(tape.mean(dev2)?)
}

/// Uniformly drawn free voxels (with replacement); empty when the carving
/// left no free space.
pub fn sample_free_voxels(grid: &CarveGrid, free: &[usize], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    debug_assert!(free.iter().all(|&i| !grid.is_object(i)));
    if free.is_empty() {
        warn!("no free voxels; free-space term is zero");
        return Vec::new();
    }
    (0..n).map(|_| free[rng.gen_range(0..free.len())]).collect()
}

/// Mean of `max(0, b - d)` over the given voxel centres.
pub fn loss_free_space(field: &dyn SdfField, grid: &CarveGrid, voxels: &[usize]) -> f64 {
    if voxels.is_empty() {
        return 0.0;
    }
    let pts: Vec<Vec3> = voxels.iter().map(|&v| grid.center(v)).collect();
    let d = field.distances(&pts);
    let b = grid.lower_bounds();
    voxels
        .iter()
        .zip(&d)
        .map(|(&v, d)| (b[v] as f64 - d).max(0.0))
        .sum::<f64>()
        / voxels.len() as f64
}

pub fn free_space_tape<F: Real>(
    tape: &mut Tape<F>,
    field: &dyn TapeField<F>,
    grid: &CarveGrid,
    voxels: &[usize],
) -> Result<NodeId, LossError> {
    if voxels.is_empty() {
        return Ok(tape.fixed(0.0));
    }
    let pts: Vec<Vec3> = voxels.iter().map(|&v| grid.center(v)).collect();
    let b: Vec<f64> = voxels.iter().map(|&v| grid.lower_bounds()[v] as f64).collect();
    let d = field.sdf(tape, &pts)?;
    let b = tape.fixed_column(&b);
    let gap = tape.sub(b, d)?;
    let h = tape.relu(gap)?;
    Ok(tape.mean(h)?)
}

/// Per-term values and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tau: f64,
    pub eikonal: f64,
    pub zero: f64,
    pub entropy: f64,
    pub free: f64,
    pub total: f64,
}

fn check_weights(w: &LossWeights) -> Result<(), LossError> {
    let names = ["tau", "eikonal", "zero", "entropy", "free"];
    for (name, value) in names.into_iter().zip(w.as_array()) {
        if !value.is_finite() {
            return Err(LossError::NonFiniteWeight { name });
        }
        if value < 0.0 {
            return Err(LossError::NegativeWeight { name, value });
        }
    }
    Ok(())
}

impl LossBreakdown {
    /// Components in the order tau, eikonal, zero, entropy, free.
    pub fn new(components: [f64; 5], weights: &LossWeights) -> Result<Self, LossError> {
        check_weights(weights)?;
        let [tau, eikonal, zero, entropy, free] = components;
        let l = weights.as_array();
        let total = l[0] * tau + l[1] * eikonal + l[2] * zero + l[3] * entropy + l[4] * free;
        Ok(Self {
            tau,
            eikonal,
            zero,
            entropy,
            free,
            total,
        })
    }

    pub fn components(&self) -> [f64; 5] {
        [self.tau, self.eikonal, self.zero, self.entropy, self.free]
    }
}

/// Weighted sum of the five term nodes on the tape. Terms with zero weight
/// are left out of the graph.
pub fn weighted_total_tape<F: Real>(
    tape: &mut Tape<F>,
    terms: [NodeId; 5],
    weights: &LossWeights,
) -> Result<NodeId, LossError> {
    check_weights(weights)?;
    let mut total = None;
    for (node, w) in terms.into_iter().zip(weights.as_array()) {
        if w == 0.0 {
            continue;
        }
        let s = tape.scale(node, w)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.fixed(0.0),
    })
}
