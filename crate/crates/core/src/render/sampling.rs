use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;

use crate::data::Vec3;

/// Hemispherical angular grid in front of the wall. Elevation `theta` covers
/// `(0, pi/2]` and azimuth `phi` covers `[0, 2 pi)`, both uniformly spaced.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereSampleGrid {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub d_theta: f64,
    pub d_phi: f64,
}

impl SphereSampleGrid {
    /// Cell-centred grid, `theta_i = (i + 0.5) d_theta`.
    pub fn uniform(n_theta: usize, n_phi: usize) -> Self {
        Self::with_offset(n_theta, n_phi, 0.5, 0.5)
    }

    /// Grid shifted by a random fraction of a cell in each angle, so repeated
    /// draws cover the hemisphere while each draw stays uniformly spaced.
    pub fn jittered(n_theta: usize, n_phi: usize, rng: &mut impl Rng) -> Self {
        let ot = 1.0 - rng.gen::<f64>();
        let op = rng.gen::<f64>();
        Self::with_offset(n_theta, n_phi, ot, op)
    }

    pub fn with_offset(n_theta: usize, n_phi: usize, off_theta: f64, off_phi: f64) -> Self {
        assert!(n_theta >= 1 && n_phi >= 1, "angular sample counts must be >= 1");
        assert!(
            off_theta > 0.0 && off_theta <= 1.0,
            "elevation offset must lie in (0, 1]"
        );
        let d_theta = FRAC_PI_2 / n_theta as f64;
        let d_phi = 2.0 * PI / n_phi as f64;
        Self {
            theta: (0..n_theta).map(|i| (i as f64 + off_theta) * d_theta).collect(),
            phi: (0..n_phi).map(|j| (j as f64 + off_phi) * d_phi).collect(),
            d_theta,
            d_phi,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(theta, phi)` of flat direction index `k` (theta-major).
    pub fn angles(&self, k: usize) -> (f64, f64) {
        (self.theta[k / self.phi.len()], self.phi[k % self.phi.len()])
    }
}

/// Unit direction for elevation `theta` from the normal and azimuth `phi`,
/// expressed in the frame `(u, v, n)`.
pub fn direction(frame: &(Vec3, Vec3, Vec3), theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    frame.0 * (st * cp) + frame.1 * (st * sp) + frame.2 * ct
}

/// Point at radius `r` and angles `(theta, phi)` around wall point `p'` for a
/// wall facing `+z`.
pub fn sample_sphere_point(wall_point: &Vec3, r: f64, theta: f64, phi: f64) -> Vec3 {
    wall_point + direction(&(Vec3::x(), Vec3::y(), Vec3::z()), theta, phi) * r
}

/// `sin(theta) / r^2`; `None` for a non-positive radius.
pub fn attenuation(r: f64, theta: f64) -> Option<f64> {
    (r > 0.0).then(|| theta.sin() / (r * r))
}

/// `(1 / alpha) * sigmoid(-d / alpha)`.
pub fn density_from_sdf(d: f64, alpha: f64) -> f64 {
    let x = -d / alpha;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s / alpha
}
