use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use super::sampling::{direction, SphereSampleGrid};
use crate::autodiff::{NodeId, Real, Tape, TapeError};
use crate::data::{tangent_frame, SceneBounds, TransientVolume, Vec3, WeightMode};
use crate::fields::{BoundScene, NeuralScene};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("empty bin range {0:?}")]
    EmptyBins(Range<usize>),
    #[error("bin range {range:?} exceeds the {bins} bins of the volume")]
    BinsOutOfRange { range: Range<usize>, bins: usize },
    #[error("non-finite value while rendering wall point {wall:?}: {source}")]
    NonFinite { wall: [f64; 3], source: TapeError },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Fields the renderer queries on a tape: signed distance, reflectance and
/// the density sharpness.
pub trait TapeField<F: Real> {
    /// Signed distances of `points`, an `n x 1` node.
    fn sdf(&self, tape: &mut Tape<F>, points: &[Vec3]) -> Result<NodeId, TapeError>;
    /// Reflectance at `points` seen from unit directions `dirs`, `n x 1`.
    fn reflectance(&self, tape: &mut Tape<F>, points: &[Vec3], dirs: &[Vec3]) -> Result<NodeId, TapeError>;
    /// The `1 x 1` sharpness node.
    fn alpha(&self, tape: &mut Tape<F>) -> NodeId;
}

impl<F: Real> TapeField<F> for BoundScene<'_> {
    fn sdf(&self, tape: &mut Tape<F>, points: &[Vec3]) -> Result<NodeId, TapeError> {
        self.scene.sdf.eval(tape, &self.sdf, points)
    }
    fn reflectance(&self, tape: &mut Tape<F>, points: &[Vec3], dirs: &[Vec3]) -> Result<NodeId, TapeError> {
        self.scene.reflectance.eval(tape, &self.reflectance, points, dirs)
    }
    fn alpha(&self, _tape: &mut Tape<F>) -> NodeId {
        self.alpha
    }
}

/// Binds the needed network on every call, so each query adds fresh
/// parameter nodes. Meant for evaluation; training binds once through
/// [`NeuralScene::bind`].
impl<F: Real> TapeField<F> for NeuralScene {
    fn sdf(&self, tape: &mut Tape<F>, points: &[Vec3]) -> Result<NodeId, TapeError> {
        let b = self.sdf.mlp.bind(tape, &self.params);
        self.sdf.eval(tape, &b, points)
    }
    fn reflectance(&self, tape: &mut Tape<F>, points: &[Vec3], dirs: &[Vec3]) -> Result<NodeId, TapeError> {
        let b = self.reflectance.mlp.bind(tape, &self.params);
        self.reflectance.eval(tape, &b, points, dirs)
    }
    fn alpha(&self, tape: &mut Tape<F>) -> NodeId {
        self.alpha.bind(tape, &self.params).expect("alpha binds on any tape")
    }
}

/// Closed-form field with constant reflectance and fixed sharpness.
pub struct AnalyticField<S> {
    pub sdf: S,
    pub albedo: f64,
    pub alpha: f64,
}

impl<F: Real, S: Fn(&Vec3) -> f64> TapeField<F> for AnalyticField<S> {
    fn sdf(&self, tape: &mut Tape<F>, points: &[Vec3]) -> Result<NodeId, TapeError> {
        let d: Vec<f64> = points.iter().map(&self.sdf).collect();
        Ok(tape.fixed_column(&d))
    }
    fn reflectance(&self, tape: &mut Tape<F>, points: &[Vec3], _dirs: &[Vec3]) -> Result<NodeId, TapeError> {
        Ok(tape.fixed_column(&vec![self.albedo; points.len()]))
    }
    fn alpha(&self, tape: &mut Tape<F>) -> NodeId {
        tape.fixed(self.alpha)
    }
}

/// Radial geometry of one wall point's scan spheres.
#[derive(Clone, Debug)]
pub struct RadialBins {
    pub wall_point: Vec3,
    pub normal: Vec3,
    /// Radii of the rendered bins.
    pub radii: Vec<f64>,
    pub step: f64,
    /// Global bin indices rendered.
    pub bins: Range<usize>,
}

impl RadialBins {
    pub fn from_volume(tau: &TransientVolume, wall_index: usize, bins: Range<usize>) -> Result<Self, RenderError> {
        if bins.is_empty() {
            return Err(RenderError::EmptyBins(bins));
        }
        if bins.end > tau.bins() {
            return Err(RenderError::BinsOutOfRange {
                range: bins,
                bins: tau.bins(),
            });
        }
        Ok(Self {
            wall_point: tau.wall().position(wall_index),
            normal: tau.wall().normal(),
            radii: bins.clone().map(|t| tau.radius(t)).collect(),
            step: tau.radial_step(),
            bins,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    pub weight_mode: WeightMode,
    /// Density is treated as zero outside these bounds, so samples there are
    /// skipped.
    pub bounds: Option<SceneBounds>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::PerBin,
            bounds: None,
        }
    }
}

/// Sample layout of a rendered wall point: samples are grouped per direction
/// (`offsets`), ordered by increasing radius inside each group.
#[derive(Clone, Debug)]
pub struct SampleLayout {
    pub offsets: Arc<[usize]>,
    /// Index into the rendered bin range, per sample.
    pub bin: Arc<[usize]>,
    /// Flat direction index, per sample.
    pub dir: Vec<usize>,
    pub points: Vec<Vec3>,
}

impl SampleLayout {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn directions(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Tape nodes produced by [`render_transient`].
#[derive(Clone, Debug)]
pub struct RenderedTransient {
    /// Object transient over the rendered bins.
    pub tau_o: NodeId,
    /// Accumulated weight per direction.
    pub opacity: NodeId,
    /// Per-sample weights.
    pub weights: NodeId,
    /// Per-sample transmittance before the sample.
    pub transmittance: NodeId,
    /// Per-sample reflectance; `None` when no sample was taken.
    pub reflectance: Option<NodeId>,
    pub layout: SampleLayout,
    pub bins: Range<usize>,
}

/// Lay out the samples of one wall point.
pub fn sample_layout(radial: &RadialBins, grid: &SphereSampleGrid, bounds: Option<&SceneBounds>) -> SampleLayout {
    let frame = tangent_frame(&radial.normal);
    let nb = radial.radii.len();
    let mut offsets = Vec::with_capacity(grid.len() + 1);
    let mut bin = Vec::new();
    let mut dir = Vec::new();
    let mut points = Vec::new();
    offsets.push(0);
    for k in 0..grid.len() {
        let (th, ph) = grid.angles(k);
        let d = direction(&frame, th, ph);
        let range = match bounds {
            None => 0..nb,
            Some(b) => match b.ray_interval(&radial.wall_point, &d) {
                None => 0..0,
                Some((t0, t1)) => {
                    let lo = radial.radii.partition_point(|r| *r < t0);
                    let hi = radial.radii.partition_point(|r| *r <= t1);
                    lo..hi.max(lo)
                }
            },
        };
        for i in range {
            bin.push(i);
            dir.push(k);
            points.push(radial.wall_point + d * radial.radii[i]);
        }
        offsets.push(points.len());
    }
    SampleLayout {
        offsets: offsets.into(),
        bin: bin.into(),
        dir,
        points,
    }
}

/// Differentiable confocal transient of one wall point.
///
/// Along every direction the radial march forms `T_t = exp(-sum_{s<t}
/// sigma_s dr)` and `w_t = T_t (1 - exp(-sigma_t dr))`; the object transient
/// is `sum_dirs A(r_t, theta) w_t rho dtheta dphi` per bin and the opacity of
/// a direction is `sum_t w_t`.
pub fn render_transient<F: Real>(
    tape: &mut Tape<F>,
    field: &dyn TapeField<F>,
    radial: &RadialBins,
    grid: &SphereSampleGrid,
    opts: &RenderOptions,
) -> Result<RenderedTransient, RenderError> {
    if radial.radii.is_empty() {
        return Err(RenderError::EmptyBins(radial.bins.clone()));
    }
    let layout = sample_layout(radial, grid, opts.bounds.as_ref());
    let wall = [radial.wall_point.x, radial.wall_point.y, radial.wall_point.z];
    let wrap = |source: TapeError| match source {
        TapeError::NonFinite { .. } => RenderError::NonFinite { wall, source },
        other => RenderError::Tape(other),
    };
    render_layout(tape, field, radial, grid, opts, layout).map_err(wrap)
}

fn render_layout<F: Real>(
    tape: &mut Tape<F>,
    field: &dyn TapeField<F>,
    radial: &RadialBins,
    grid: &SphereSampleGrid,
    opts: &RenderOptions,
    layout: SampleLayout,
) -> Result<RenderedTransient, TapeError> {
    let nb = radial.radii.len();
    let alpha = field.alpha(tape);
    if layout.is_empty() {
        let zeros = tape.fixed_column(&vec![0.0; nb]);
        let opacity = tape.fixed_column(&vec![0.0; grid.len()]);
        let empty = tape.fixed_column(&[]);
        return Ok(RenderedTransient {
            tau_o: zeros,
            opacity,
            weights: empty,
            transmittance: empty,
            reflectance: None,
            layout,
            bins: radial.bins.clone(),
        });
    }
    let frame = tangent_frame(&radial.normal);
    let d = field.sdf(tape, &layout.points)?;
    let neg = tape.neg(d)?;
    let x = tape.div(neg, alpha)?;
    let s = tape.sigmoid(x)?;
    let sigma = tape.div(s, alpha)?;
    let od = tape.scale(sigma, radial.step)?;
    let cum = tape.segment_cumsum(od, layout.offsets.clone())?;
    let ncum = tape.neg(cum)?;
    let trans = tape.exp(ncum)?;
    let nod = tape.neg(od)?;
    let e = tape.exp(nod)?;
    let ne = tape.neg(e)?;
    let absorb = tape.shift(ne, 1.0)?;
    let mut w = tape.mul(trans, absorb)?;
    if opts.weight_mode == WeightMode::Cumulative {
        let before = tape.segment_cumsum(w, layout.offsets.clone())?;
        w = tape.add(before, w)?;
    }
    let opacity = tape.segment_sum(w, layout.offsets.clone())?;
    let to_wall: Vec<Vec3> = layout
        .dir
        .iter()
        .map(|&k| {
            let (th, ph) = grid.angles(k);
            -direction(&frame, th, ph)
        })
        .collect();
    let rho = field.reflectance(tape, &layout.points, &to_wall)?;
    let coef: Vec<f64> = layout
        .bin
        .iter()
        .zip(&layout.dir)
        .map(|(&i, &k)| {
            let r = radial.radii[i];
            grid.angles(k).0.sin() / (r * r) * grid.d_theta * grid.d_phi
        })
        .collect();
    let coef = tape.fixed_column(&coef);
    let wr = tape.mul(w, rho)?;
    let contrib = tape.mul(wr, coef)?;
    let tau_o = tape.scatter_add(contrib, layout.bin.clone(), nb)?;
    Ok(RenderedTransient {
        tau_o,
        opacity,
        weights: w,
        transmittance: trans,
        reflectance: Some(rho),
        layout,
        bins: radial.bins.clone(),
    })
}

/// Evaluate [`render_transient`] on a scratch double-precision tape and return
/// `(tau_o, opacity)`.
pub fn render_transient_values(
    field: &dyn TapeField<f64>,
    radial: &RadialBins,
    grid: &SphereSampleGrid,
    opts: &RenderOptions,
) -> Result<(Vec<f64>, Vec<f64>), RenderError> {
    let mut tape = Tape::<f64>::new();
    let r = render_transient(&mut tape, field, radial, grid, opts)?;
    Ok((tape.value(r.tau_o).to_vec(), tape.value(r.opacity).to_vec()))
}
