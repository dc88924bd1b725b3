use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Axis-aligned box containing the hidden scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, String> {
        if (0..3).all(|i| min[i] < max[i]) && min.iter().chain(&max).all(|v| v.is_finite()) {
            Ok(Self { min, max })
        } else {
            Err(format!(
                "scene bounds need min < max componentwise, got {min:?} / {max:?}"
            ))
        }
    }

    /// Cube of half-size `half` around `center`.
    pub fn cube(center: Vec3, half: f64) -> Self {
        Self {
            min: [center.x - half, center.y - half, center.z - half],
            max: [center.x + half, center.y + half, center.z + half],
        }
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max_v() - self.min_v()
    }

    /// Largest half extent; the isotropic scale used to normalize coordinates.
    pub fn half_extent(&self) -> f64 {
        self.extent().max() * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Parametric entry/exit distances of the ray `o + t d` (t >= 0) through
    /// the box, or `None` when it misses.
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            if dir[i].abs() < 1e-300 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut a, mut b) = ((self.min[i] - origin[i]) * inv, (self.max[i] - origin[i]) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    /// Map into the normalized cube `[-1, 1]^3` (isotropically).
    pub fn normalize(&self, p: &Vec3) -> Vec3 {
        (p - self.center()) / self.half_extent()
    }
}

/// Orthonormal frame `(u, v, n)` with `n` the given unit normal. For
/// `n = +z` this is the identity frame.
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3, Vec3) {
    let n = n.normalize();
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let v = n.cross(&helper).normalize();
    let u = v.cross(&n);
    (u, v, n)
}
