use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoding::{encode_into, encoded_width};
use super::mlp::{BoundMlp, Mlp};
use crate::autodiff::{NodeId, ParamBlock, ParamKey, ParamRole, ParamVector, Real, Tape, TapeError};
use crate::data::{NetworkConfig, SceneBounds, Vec3};
use crate::optim::Adam;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("initial radius must be positive and inside the scene half extent {half}, got {r0}")]
    BadRadius { r0: f64, half: f64 },
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Plain (untaped) signed-distance evaluation, shared by analytic scenes and
/// trained networks.
pub trait SdfField: Sync {
    fn distances(&self, points: &[Vec3]) -> Vec<f64>;

    fn distance(&self, p: &Vec3) -> f64 {
        self.distances(std::slice::from_ref(p))[0]
    }
}

impl<T: Fn(&Vec3) -> f64 + Sync> SdfField for T {
    fn distances(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(self).collect()
    }
}

/// Central-difference gradients of `field` at every point.
pub fn sdf_grads(field: &dyn SdfField, points: &[Vec3], eps: f64) -> Vec<Vec3> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probes = Vec::with_capacity(points.len() * 6);
    for p in points {
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = eps;
            probes.push(p + e);
            probes.push(p - e);
        }
    }
    let d = field.distances(&probes);
    d.chunks_exact(6)
        .map(|c| Vec3::new(c[0] - c[1], c[2] - c[3], c[4] - c[5]) / (2.0 * eps))
        .collect()
}

pub fn sdf_grad(field: &dyn SdfField, p: &Vec3, eps: f64) -> Vec3 {
    sdf_grads(field, std::slice::from_ref(p), eps)[0]
}

/// Isotropic map of scene coordinates into the normalized cube.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalizer {
    pub fn from_bounds(b: &SceneBounds) -> Self {
        let c = b.center();
        Self {
            center: [c.x, c.y, c.z],
            scale: b.half_extent(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> [f64; 3] {
        [
            (p.x - self.center[0]) / self.scale,
            (p.y - self.center[1]) / self.scale,
            (p.z - self.center[2]) / self.scale,
        ]
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }
}

fn to_real<F: Real>(v: Vec<f64>) -> Vec<F> {
    v.into_iter().map(F::from_f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfNetwork {
    pub mlp: Mlp,
    pub l_pos: usize,
    pub norm: Normalizer,
}

impl SdfNetwork {
    pub fn input_width(&self) -> usize {
        encoded_width(3, self.l_pos)
    }

    pub fn encode(&self, points: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len() * self.input_width());
        for p in points {
            encode_into(&self.norm.apply(p), self.l_pos, &mut out);
        }
        out
    }

    /// Signed distances (`n x 1`, meters) of `points` on `tape`.
    pub fn eval<F: Real>(&self, tape: &mut Tape<F>, bound: &BoundMlp, points: &[Vec3]) -> Result<NodeId, TapeError> {
        let x = tape.constant_input(points.len(), self.input_width(), to_real(self.encode(points)));
        let y = bound.forward(tape, x)?;
        tape.scale(y, self.norm.scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectanceNetwork {
    pub mlp: Mlp,
    pub l_pos: usize,
    pub l_dir: usize,
    pub norm: Normalizer,
}

/// Return `v` normalized; non-unit inputs are logged.
fn unit_dir(v: &Vec3) -> Vec3 {
    let n = v.norm();
    if (n - 1.0).abs() > 1e-6 {
        warn!("reflectance direction with norm {n} normalized");
    }
    v / n
}

impl ReflectanceNetwork {
    pub fn input_width(&self) -> usize {
        encoded_width(3, self.l_pos) + encoded_width(3, self.l_dir)
    }

    pub fn encode(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<f64> {
        assert_eq!(points.len(), dirs.len());
        let mut out = Vec::with_capacity(points.len() * self.input_width());
        for (p, v) in points.iter().zip(dirs) {
            encode_into(&self.norm.apply(p), self.l_pos, &mut out);
            let v = unit_dir(v);
            encode_into(&[v.x, v.y, v.z], self.l_dir, &mut out);
        }
        out
    }

    pub fn eval<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundMlp,
        points: &[Vec3],
        dirs: &[Vec3],
    ) -> Result<NodeId, TapeError> {
        let x = tape.constant_input(points.len(), self.input_width(), to_real(self.encode(points, dirs)));
        let y = bound.forward(tape, x)?;
        tape.softplus(y, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundNetwork {
    pub mlp: Mlp,
    pub l_pos: usize,
    pub l_time: usize,
    pub norm: Normalizer,
}

impl BackgroundNetwork {
    pub fn input_width(&self) -> usize {
        encoded_width(3, self.l_pos) + encoded_width(1, self.l_time)
    }

    /// `t_norm` are bin positions normalized to `[0, 1]`.
    pub fn encode(&self, wall_point: &Vec3, t_norm: &[f64]) -> Vec<f64> {
        let mut pos = Vec::new();
        encode_into(&self.norm.apply(wall_point), self.l_pos, &mut pos);
        let mut out = Vec::with_capacity(t_norm.len() * self.input_width());
        for &t in t_norm {
            out.extend_from_slice(&pos);
            encode_into(&[t], self.l_time, &mut out);
        }
        out
    }

    pub fn eval<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundMlp,
        wall_point: &Vec3,
        t_norm: &[f64],
    ) -> Result<NodeId, TapeError> {
        let x = tape.constant_input(
            t_norm.len(),
            self.input_width(),
            to_real(self.encode(wall_point, t_norm)),
        );
        let y = bound.forward(tape, x)?;
        tape.softplus(y, 1.0)
    }
}

/// Trainable `alpha = exp(scale * a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParam {
    pub block: ParamBlock,
    pub scale: f64,
}

impl AlphaParam {
    pub fn value(&self, params: &ParamVector) -> f64 {
        (self.scale * params.block_values(&self.block)[0]).exp()
    }

    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, params: &ParamVector) -> Result<NodeId, TapeError> {
        let a = tape.param(params, &self.block);
        let s = tape.scale(a, self.scale)?;
        tape.exp(s)
    }
}

/// All trainable fields of a reconstruction plus their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralScene {
    pub params: ParamVector,
    pub sdf: SdfNetwork,
    pub reflectance: ReflectanceNetwork,
    pub background: BackgroundNetwork,
    pub alpha: AlphaParam,
    pub bounds: SceneBounds,
}

fn uniform_init<'a>(rng: &'a mut ChaCha8Rng, dims: &[usize]) -> impl FnMut(usize, usize, usize, bool) -> f64 + 'a {
    let dims = dims.to_vec();
    move |l, _, _, _| {
        let bound = 1.0 / (dims[l] as f64).sqrt();
        rng.gen_range(-bound..bound)
    }
}

fn layer_dims(input: usize, width: usize, layers: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat(width).take(layers));
    d.push(1);
    d
}

impl NeuralScene {
    /// Fresh networks; the SDF starts as a sphere of radius
    /// `init_radius * half_extent` around the bounds centre.
    pub fn new(cfg: &NetworkConfig, bounds: SceneBounds, seed: u64) -> Result<Self, FieldError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::new();
        let norm = Normalizer::from_bounds(&bounds);
        let sdf_dims = layer_dims(encoded_width(3, cfg.l_pos), cfg.sdf_width, cfg.sdf_layers);
        let sdf = SdfNetwork {
            mlp: Mlp::register(&mut params, "sdf", &sdf_dims, cfg.softplus_beta, |_, _, _, _| 0.0),
            l_pos: cfg.l_pos,
            norm,
        };
        let refl_dims = layer_dims(
            encoded_width(3, cfg.l_pos) + encoded_width(3, cfg.l_dir),
            cfg.reflectance_width,
            cfg.reflectance_layers,
        );
        let reflectance = ReflectanceNetwork {
            mlp: Mlp::register(
                &mut params,
                "reflectance",
                &refl_dims,
                cfg.softplus_beta,
                uniform_init(&mut rng, &refl_dims),
            ),
            l_pos: cfg.l_pos,
            l_dir: cfg.l_dir,
            norm,
        };
        let bg_dims = layer_dims(
            encoded_width(3, cfg.l_pos) + encoded_width(1, cfg.l_time),
            cfg.background_width,
            cfg.background_layers,
        );
        let background = BackgroundNetwork {
            mlp: Mlp::register(
                &mut params,
                "background",
                &bg_dims,
                cfg.softplus_beta,
                uniform_init(&mut rng, &bg_dims),
            ),
            l_pos: cfg.l_pos,
            l_time: cfg.l_time,
            norm,
        };
        let a0 = cfg.alpha_init.ln() / cfg.alpha_scale;
        let block = params.register(ParamKey::new("alpha", 0, ParamRole::Scalar), 1, 1, |_, _| a0);
        let mut scene = Self {
            params,
            sdf,
            reflectance,
            background,
            alpha: AlphaParam {
                block,
                scale: cfg.alpha_scale,
            },
            bounds,
        };
        let r0 = cfg.init_radius * bounds.half_extent();
        geometric_init(&scene.sdf, &mut scene.params, &bounds, r0, rng.gen())?;
        Ok(scene)
    }

    pub fn alpha_value(&self) -> f64 {
        self.alpha.value(&self.params)
    }

    pub fn bind<'a, F: Real>(&'a self, tape: &mut Tape<F>) -> Result<BoundScene<'a>, TapeError> {
        self.bind_with(tape, &self.params)
    }

    /// Bind with an explicit parameter vector of the same layout (used by
    /// finite-difference probes).
    pub fn bind_with<'a, F: Real>(
        &'a self,
        tape: &mut Tape<F>,
        params: &ParamVector,
    ) -> Result<BoundScene<'a>, TapeError> {
        Ok(BoundScene {
            scene: self,
            sdf: self.sdf.mlp.bind(tape, params),
            reflectance: self.reflectance.mlp.bind(tape, params),
            background: self.background.mlp.bind(tape, params),
            alpha: self.alpha.bind(tape, params)?,
        })
    }

    /// Untaped view of the signed distance field.
    pub fn sdf_field(&self) -> NeuralSdf<'_> {
        NeuralSdf {
            net: &self.sdf,
            params: &self.params,
        }
    }
}

/// A [`NeuralScene`] bound to one tape.
pub struct BoundScene<'a> {
    pub scene: &'a NeuralScene,
    pub sdf: BoundMlp,
    pub reflectance: BoundMlp,
    pub background: BoundMlp,
    pub alpha: NodeId,
}

/// Evaluation chunk for untaped queries, bounding tape memory.
const CHUNK: usize = 4096;

pub struct NeuralSdf<'a> {
    pub net: &'a SdfNetwork,
    pub params: &'a ParamVector,
}

impl SdfField for NeuralSdf<'_> {
    fn distances(&self, points: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let mut tape = Tape::<f64>::new();
            let bound = self.net.mlp.bind(&mut tape, self.params);
            let d = self
                .net
                .eval(&mut tape, &bound, chunk)
                .expect("signed distance network produced a non-finite value");
            out.extend_from_slice(tape.value(d));
        }
        out
    }
}

/// Outcome of [`geometric_init`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitReport {
    pub mean_abs_dev: f64,
    /// Whether the closed-form initialization needed a corrective fit.
    pub fitted: bool,
}

fn sample_in_bounds(rng: &mut ChaCha8Rng, b: &SceneBounds, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(b.min[0]..b.max[0]),
                rng.gen_range(b.min[1]..b.max[1]),
                rng.gen_range(b.min[2]..b.max[2]),
            )
        })
        .collect()
}

fn mean_abs_dev(net: &SdfNetwork, params: &ParamVector, pts: &[Vec3], r0: f64) -> f64 {
    let c = net.norm.center();
    let d = NeuralSdf { net, params }.distances(pts);
    pts.iter()
        .zip(&d)
        .map(|(p, d)| (d - ((p - c).norm() - r0)).abs())
        .sum::<f64>()
        / pts.len() as f64
}

/// Initialize the SDF network as a sphere of radius `r0` around the bounds
/// centre. Hidden weights are Gaussian with the encoding columns of the first
/// layer zeroed, the output layer has mean `sqrt(pi / width)` and bias
/// `-r0`. If the result deviates from the sphere by more than `0.1 r0` on
/// average, a short regression onto the analytic sphere follows.
pub fn geometric_init(
    net: &SdfNetwork,
    params: &mut ParamVector,
    bounds: &SceneBounds,
    r0: f64,
    seed: u64,
) -> Result<InitReport, FieldError> {
    let half = bounds.half_extent();
    if !(r0 > 0.0 && r0 < half) {
        return Err(FieldError::BadRadius { r0, half });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = net.mlp.dims().to_vec();
    let last = dims.len() - 2;
    for (l, (wb, bb)) in net.mlp.layers().iter().enumerate() {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = params.block_values_mut(wb);
        if l == last {
            let dist = Normal::new((std::f64::consts::PI / fan_in as f64).sqrt(), 1e-4).unwrap();
            w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            params.block_values_mut(bb).fill(-r0 / net.norm.scale);
        } else {
            let dist = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).unwrap();
            for r in 0..fan_out {
                for c in 0..fan_in {
                    let v = dist.sample(&mut rng);
                    w[r * fan_in + c] = if l == 0 && c >= 3 { 0.0 } else { v };
                }
            }
            params.block_values_mut(bb).fill(0.0);
        }
    }
    let probe = sample_in_bounds(&mut rng, bounds, 1000);
    let mad = mean_abs_dev(net, params, &probe, r0);
    if mad < 0.1 * r0 {
        return Ok(InitReport {
            mean_abs_dev: mad,
            fitted: false,
        });
    }
    fit_sphere(net, params, bounds, r0, &mut rng)?;
    Ok(InitReport {
        mean_abs_dev: mean_abs_dev(net, params, &probe, r0),
        fitted: true,
    })
}

/// Regress the SDF network onto `|p - c| - r0` with Adam.
fn fit_sphere(
    net: &SdfNetwork,
    params: &mut ParamVector,
    bounds: &SceneBounds,
    r0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), FieldError> {
    let range = params.network_range(net.mlp.name()).expect("sdf network registered");
    let mut adam = Adam::new(range.len(), 1e-3, 0.9, 0.999, 1e-8);
    let c = net.norm.center();
    let s = net.norm.scale;
    for _ in 0..400 {
        let pts = sample_in_bounds(rng, bounds, 256);
        let target: Vec<f64> = pts.iter().map(|p| ((p - c).norm() - r0) / s).collect();
        let mut tape = Tape::<f64>::new();
        let bound = net.mlp.bind(&mut tape, params);
        let d = net.eval(&mut tape, &bound, &pts)?;
        let t = tape.fixed_column(&target);
        let ds = tape.scale(d, 1.0 / s)?;
        let e = tape.sub(ds, t)?;
        let e2 = tape.square(e)?;
        let loss = tape.mean(e2)?;
        let grads = tape.backward(loss)?;
        let mut g = vec![0.0; params.len()];
        grads.accumulate_params(&tape, &mut g);
        let values = &mut params.values_mut()[range.clone()];
        if adam.update(values, &g[range.clone()]).is_err() {
            break;
        }
    }
    Ok(())
}
