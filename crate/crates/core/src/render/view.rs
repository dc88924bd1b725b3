use serde::{Deserialize, Serialize};

use super::transient::TapeField;
use crate::autodiff::{Tape, TapeError};
use crate::data::{tangent_frame, SceneBounds, Vec3};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    Orthographic { half_width: f64, half_height: f64 },
    Pinhole { fov_y_deg: f64 },
}

/// A camera looking along `forward`; image row 0 is the `up` side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub forward: [f64; 3],
    pub up: [f64; 3],
    pub projection: Projection,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = Vec3::from(self.forward).normalize();
        let right = f.cross(&Vec3::from(self.up)).normalize();
        let up = right.cross(&f);
        (right, up, f)
    }

    /// Ray origin and unit direction through the centre of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> (Vec3, Vec3) {
        let (right, up, f) = self.basis();
        let x = 2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0;
        let y = 1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64;
        let eye = Vec3::from(self.eye);
        match self.projection {
            Projection::Orthographic {
                half_width,
                half_height,
            } => (eye + right * (x * half_width) + up * (y * half_height), f),
            Projection::Pinhole { fov_y_deg } => {
                let t = (fov_y_deg.to_radians() / 2.0).tan();
                let aspect = self.width as f64 / self.height as f64;
                (eye, (f + right * (x * t * aspect) + up * (y * t)).normalize())
            }
        }
    }

    /// Orthographic camera on the wall side of `bounds` looking along the wall
    /// normal, framing the bounds exactly.
    pub fn wall_facing(bounds: &SceneBounds, wall_normal: &Vec3, width: usize, height: usize) -> Self {
        let (u, v, n) = tangent_frame(wall_normal);
        let e = bounds.extent() * 0.5;
        let half_w = (u.x * e.x).abs() + (u.y * e.y).abs() + (u.z * e.z).abs();
        let half_h = (v.x * e.x).abs() + (v.y * e.y).abs() + (v.z * e.z).abs();
        let depth = (n.x * e.x).abs() + (n.y * e.y).abs() + (n.z * e.z).abs();
        let eye = bounds.center() - n * depth;
        Self {
            eye: eye.into(),
            forward: n.into(),
            up: v.into(),
            projection: Projection::Orthographic {
                half_width: half_w,
                half_height: half_h,
            },
            width,
            height,
        }
    }

    /// Orthographic view of `bounds` from a direction rotated away from the
    /// wall normal by `elevation` towards `v`, then by `azimuth` around `v`.
    pub fn orbit(
        bounds: &SceneBounds,
        wall_normal: &Vec3,
        azimuth_deg: f64,
        elevation_deg: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let (u, v, n) = tangent_frame(wall_normal);
        let (sa, ca) = azimuth_deg.to_radians().sin_cos();
        let (se, ce) = elevation_deg.to_radians().sin_cos();
        let f = (n * (ca * ce) + u * (sa * ce) + v * se).normalize();
        let up = (v * ce - (n * ca + u * sa) * se).normalize();
        let radius = bounds.extent().norm() * 0.5;
        Self {
            eye: (bounds.center() - f * radius).into(),
            forward: f.into(),
            up: up.into(),
            projection: Projection::Orthographic {
                half_width: radius,
                half_height: radius,
            },
            width,
            height,
        }
    }
}

/// Directional albedo image: along each camera ray through `bounds`,
/// `sum_s w_s rho(p_s, -dir)` with the same weights as the transient
/// renderer and `samples` evenly spaced samples per ray.
pub fn render_view(
    field: &dyn TapeField<f64>,
    camera: &Camera,
    bounds: &SceneBounds,
    samples: usize,
) -> Result<Image, TapeError> {
    assert!(samples >= 1);
    let mut img = Image::new(camera.width, camera.height);
    for row in 0..camera.height {
        let mut points = Vec::new();
        let mut dirs = Vec::new();
        let mut steps = Vec::new();
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        for col in 0..camera.width {
            let (o, d) = camera.ray(row, col);
            if let Some((t0, t1)) = bounds.ray_interval(&o, &d) {
                let dt = (t1 - t0) / samples as f64;
                if dt > 0.0 {
                    for s in 0..samples {
                        points.push(o + d * (t0 + (s as f64 + 0.5) * dt));
                        dirs.push(-d);
                        steps.push(dt);
                    }
                    offsets.push(points.len());
                    cols.push(col);
                }
            }
        }
        if points.is_empty() {
            continue;
        }
        let mut tape = Tape::<f64>::new();
        let alpha = field.alpha(&mut tape);
        let d = field.sdf(&mut tape, &points)?;
        let neg = tape.neg(d)?;
        let x = tape.div(neg, alpha)?;
        let s = tape.sigmoid(x)?;
        let sigma = tape.div(s, alpha)?;
        let step = tape.fixed_column(&steps);
        let od = tape.mul(sigma, step)?;
        let offs: std::sync::Arc<[usize]> = offsets.into();
        let cum = tape.segment_cumsum(od, offs.clone())?;
        let ncum = tape.neg(cum)?;
        let trans = tape.exp(ncum)?;
        let nod = tape.neg(od)?;
        let e = tape.exp(nod)?;
        let ne = tape.neg(e)?;
        let absorb = tape.shift(ne, 1.0)?;
        let w = tape.mul(trans, absorb)?;
        let rho = field.reflectance(&mut tape, &points, &dirs)?;
        let wr = tape.mul(w, rho)?;
        let albedo = tape.segment_sum(wr, offs)?;
        for (k, &col) in cols.iter().enumerate() {
            img.set(row, col, tape.value(albedo)[k]);
        }
    }
    Ok(img)
}
