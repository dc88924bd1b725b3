use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{tangent_frame, SceneBounds, Vec3};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Analytic scene element with a constant Lambertian albedo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        albedo: f64,
    },
    /// Rectangular patch through `point` with unit `normal`, spanning
    /// `half_extent` along the two in-plane axes of the normal's frame.
    Plane {
        point: [f64; 3],
        normal: [f64; 3],
        half_extent: [f64; 2],
        albedo: f64,
    },
    Box {
        center: [f64; 3],
        half_size: [f64; 3],
        albedo: f64,
    },
}

/// A ray hit: distance, albedo and an identifier of the smooth surface piece.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub r: f64,
    pub albedo: f64,
    pub surface: usize,
}

impl Primitive {
    pub fn albedo(&self) -> f64 {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Plane { albedo, .. } | Primitive::Box { albedo, .. } => {
                albedo
            }
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Primitive::Sphere { center, radius, .. } => (p - Vec3::from(*center)).norm() - radius,
            Primitive::Plane {
                point,
                normal,
                half_extent,
                ..
            } => {
                let (u, v, n) = tangent_frame(&Vec3::from(*normal));
                let q = p - Vec3::from(*point);
                let h = q.dot(&n);
                let du = (q.dot(&u).abs() - half_extent[0]).max(0.0);
                let dv = (q.dot(&v).abs() - half_extent[1]).max(0.0);
                let dist = (h * h + du * du + dv * dv).sqrt();
                if h < 0.0 {
                    -dist
                } else {
                    dist
                }
            }
            Primitive::Box { center, half_size, .. } => {
                let q = (p - Vec3::from(*center)).abs() - Vec3::from(*half_size);
                q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    /// Nearest intersection with `t > 0` of the ray `o + t d` (unit `d`).
    /// Surface ids are `8 * base + face`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3, base: usize) -> Option<Hit> {
        let albedo = self.albedo();
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = o - Vec3::from(*center);
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = if -b - sq > 0.0 { -b - sq } else { -b + sq };
                (t > 0.0).then_some(Hit {
                    r: t,
                    albedo,
                    surface: 8 * base,
                })
            }
            Primitive::Plane {
                point,
                normal,
                half_extent,
                ..
            } => {
                let (u, v, n) = tangent_frame(&Vec3::from(*normal));
                let denom = d.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (Vec3::from(*point) - o).dot(&n) / denom;
                if t <= 0.0 {
                    return None;
                }
                let q = o + d * t - Vec3::from(*point);
                (q.dot(&u).abs() <= half_extent[0] && q.dot(&v).abs() <= half_extent[1]).then_some(Hit {
                    r: t,
                    albedo,
                    surface: 8 * base,
                })
            }
            Primitive::Box { center, half_size, .. } => {
                let b = SceneBounds {
                    min: [
                        center[0] - half_size[0],
                        center[1] - half_size[1],
                        center[2] - half_size[2],
                    ],
                    max: [
                        center[0] + half_size[0],
                        center[1] + half_size[1],
                        center[2] + half_size[2],
                    ],
                };
                let (t0, t1) = b.ray_interval(o, d)?;
                let t = if t0 > 0.0 { t0 } else { t1 };
                if t <= 0.0 {
                    return None;
                }
                let q = (o + d * t - Vec3::from(*center)).component_div(&Vec3::from(*half_size));
                let axis = q.abs().imax();
                let face = 2 * axis + usize::from(q[axis] > 0.0);
                Some(Hit {
                    r: t,
                    albedo,
                    surface: 8 * base + face,
                })
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        let ok = match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Plane {
                normal, half_extent, ..
            } => (Vec3::from(*normal).norm() - 1.0).abs() < 1e-9 && half_extent.iter().all(|h| *h > 0.0),
            Primitive::Box { half_size, .. } => half_size.iter().all(|h| *h > 0.0),
        };
        if !ok {
            return Err(format!("degenerate primitive {self:?}"));
        }
        if !(self.albedo() >= 0.0) {
            return Err(format!("negative albedo in {self:?}"));
        }
        Ok(())
    }
}

/// Floor used to inject a background component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Floor {
    pub plane: Primitive,
    /// Scale applied to the floor's simulated return.
    pub factor: f64,
}

/// Analytic hidden scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<Floor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<SceneBounds>,
}

impl SceneSpec {
    /// A single sphere.
    pub fn sphere(center: Vec3, radius: f64, albedo: f64) -> Self {
        Self {
            primitives: vec![Primitive::Sphere {
                center: center.into(),
                radius,
                albedo,
            }],
            floor: None,
            bounds: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for p in &self.primitives {
            p.validate().map_err(SceneError::Invalid)?;
        }
        if let Some(f) = &self.floor {
            if !matches!(f.plane, Primitive::Plane { .. }) {
                return Err(SceneError::Invalid("floor must be a plane".into()));
            }
            f.plane.validate().map_err(SceneError::Invalid)?;
            if !(f.factor >= 0.0) {
                return Err(SceneError::Invalid("floor factor must be >= 0".into()));
            }
        }
        if let Some(b) = &self.bounds {
            SceneBounds::new(b.min, b.max).map_err(SceneError::Invalid)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let s: SceneSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Closest primitive hit along a ray; the floor is included when
    /// `with_floor` is set and gets surface ids after all primitives.
    pub fn intersect(&self, o: &Vec3, d: &Vec3, with_floor: bool) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let floor = self.floor.as_ref().filter(|_| with_floor).map(|f| &f.plane);
        for (i, p) in self.primitives.iter().chain(floor).enumerate() {
            if let Some(h) = p.intersect(o, d, i) {
                if best.map_or(true, |b| h.r < b.r) {
                    best = Some(h);
                }
            }
        }
        best
    }

    /// Whether a surface id belongs to the floor.
    pub fn is_floor_surface(&self, surface: usize) -> bool {
        self.floor.is_some() && surface / 8 == self.primitives.len()
    }

    /// Albedo of the primitive closest to `p` (object primitives only).
    pub fn albedo_at(&self, p: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|q| (q.sdf(p), q.albedo()))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or(0.0, |x| x.1)
    }
}

/// Exact union SDF of the scene's object primitives; `+inf` for an empty
/// scene.
pub fn analytic_sdf(scene: &SceneSpec, p: &Vec3) -> f64 {
    scene.primitives.iter().map(|q| q.sdf(p)).fold(f64::INFINITY, f64::min)
}
