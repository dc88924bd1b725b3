use serde::Serialize;

use super::cloud::{DepthMap, OrientedPointCloud};
use super::ExtractError;
use crate::data::Vec3;
use crate::fields::sdf_grad;
use crate::image::Image;
use crate::render::Camera;
use crate::sim::{analytic_sdf, SceneSpec};

/// Step of the central differences taken on analytic scenes.
const ANALYTIC_GRAD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DepthErrors {
    pub rmse_cm: f64,
    pub mae_cm: f64,
    /// Pixels valid in both maps.
    pub count: usize,
    /// `count` over the number of pixels valid in the reference.
    pub coverage: f64,
}

impl DepthErrors {
    pub const CSV_HEADER: &'static str = "metric,rmse,mae,count,coverage";

    pub fn csv_row(&self) -> String {
        format!(
            "depth_cm,{},{},{},{}",
            self.rmse_cm, self.mae_cm, self.count, self.coverage
        )
    }
}

/// RMSE and MAE in centimetres over pixels valid in both maps; depths are in
/// metres.
pub fn evaluate_depth(pred: &DepthMap, gt: &DepthMap) -> Result<DepthErrors, ExtractError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(ExtractError::Shape {
            expected: (gt.height(), gt.width()),
            got: (pred.height(), pred.width()),
        });
    }
    let (mut sq, mut abs, mut count, mut reference) = (0.0, 0.0, 0usize, 0usize);
    for (p, g) in pred.depth.data.iter().zip(&gt.depth.data) {
        if !g.is_finite() {
            continue;
        }
        reference += 1;
        if p.is_finite() {
            let e = (p - g) * 100.0;
            sq += e * e;
            abs += e.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(ExtractError::EmptyOverlap);
    }
    Ok(DepthErrors {
        rmse_cm: (sq / count as f64).sqrt(),
        mae_cm: abs / count as f64,
        count,
        coverage: count as f64 / reference as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalErrors {
    /// End-point error `|n_pred - n_gt|`, dimensionless.
    pub rmse: f64,
    pub mae: f64,
    pub mean_angle_deg: f64,
    pub count: usize,
}

impl NormalErrors {
    pub fn csv_row(&self) -> String {
        format!("normal_epe,{},{},{},", self.rmse, self.mae, self.count)
    }
}

/// Angle between two unit vectors in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// End-point distance of two unit vectors separated by `angle`.
pub fn end_point_from_angle(angle: f64) -> f64 {
    2.0 * (angle / 2.0).sin()
}

/// End-point error statistics over the entries selected by `mask`.
pub fn evaluate_normals(pred: &[Vec3], gt: &[Vec3], mask: &[bool]) -> Result<NormalErrors, ExtractError> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(ExtractError::Invalid(format!(
            "normal lists differ in length: {} predicted, {} reference, {} mask",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let (mut sq, mut abs, mut angle, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (i, ((a, b), &m)) in pred.iter().zip(gt).zip(mask).enumerate() {
        if !m {
            continue;
        }
        for v in [a, b] {
            if (v.norm() - 1.0).abs() > 1e-4 {
                return Err(ExtractError::NotUnit {
                    index: i,
                    norm: v.norm(),
                });
            }
        }
        let e = (a - b).norm();
        sq += e * e;
        abs += e;
        angle += angle_between(a, b);
        count += 1;
    }
    if count == 0 {
        return Err(ExtractError::EmptyOverlap);
    }
    Ok(NormalErrors {
        rmse: (sq / count as f64).sqrt(),
        mae: abs / count as f64,
        mean_angle_deg: (angle / count as f64).to_degrees(),
        count,
    })
}

/// First-surface depth of `scene` (floor excluded) along every camera ray.
pub fn analytic_depth(scene: &SceneSpec, camera: &Camera) -> DepthMap {
    let mut depth = Image::new(camera.width, camera.height);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let (o, d) = camera.ray(row, col);
            let t = scene.intersect(&o, &d, false).map_or(f64::INFINITY, |h| h.r);
            depth.set(row, col, t);
        }
    }
    DepthMap { camera: *camera, depth }
}

/// Outward unit normal of `scene` at `p`.
pub fn analytic_normal(scene: &SceneSpec, p: &Vec3) -> Vec3 {
    sdf_grad(&|q: &Vec3| analytic_sdf(scene, q), p, ANALYTIC_GRAD_STEP).normalize()
}

/// Predicted and reference normals of every point whose pixel sees the
/// scene, in cloud order.
pub fn paired_normals(cloud: &OrientedPointCloud, scene: &SceneSpec, camera: &Camera) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for (n, &px) in cloud.normals.iter().zip(&cloud.pixels) {
        let (o, d) = camera.ray(px / camera.width, px % camera.width);
        if let Some(h) = scene.intersect(&o, &d, false) {
            pred.push(*n);
            gt.push(analytic_normal(scene, &(o + d * h.r)));
        }
    }
    (pred, gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SceneBounds;

    fn map(values: &[f64]) -> DepthMap {
        let bounds = SceneBounds::cube(Vec3::zeros(), 1.0);
        let camera = Camera::wall_facing(&bounds, &Vec3::z(), values.len(), 1);
        DepthMap {
            camera,
            depth: Image {
                width: values.len(),
                height: 1,
                data: values.to_vec(),
            },
        }
    }

    #[test]
    fn identical_depths() {
        let m = map(&[0.5, 0.7, f64::INFINITY]);
        let e = evaluate_depth(&m, &m).unwrap();
        assert_eq!((e.rmse_cm, e.mae_cm, e.count), (0.0, 0.0, 2));
    }

    #[test]
    fn centimetre_offset() {
        let gt = map(&[0.5, 0.7, 0.2]);
        let pred = map(&[0.51, 0.71, 0.21]);
        let e = evaluate_depth(&pred, &gt).unwrap();
        assert!((e.rmse_cm - 1.0).abs() < 1e-9 && (e.mae_cm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_and_coverage() {
        let gt = map(&[0.5, 0.7, f64::INFINITY, 0.3]);
        let pred = map(&[0.5, f64::INFINITY, 0.2, 0.3]);
        let e = evaluate_depth(&pred, &gt).unwrap();
        assert_eq!(e.count, 2);
        assert!((e.coverage - 2.0 / 3.0).abs() < 1e-12);
        let none = map(&[f64::INFINITY; 4]);
        assert!(matches!(evaluate_depth(&none, &gt), Err(ExtractError::EmptyOverlap)));
    }

    #[test]
    fn normal_extremes() {
        let a = vec![Vec3::x(), Vec3::y()];
        let b: Vec<Vec3> = a.iter().map(|v| -v).collect();
        let e = evaluate_normals(&a, &a, &[true, true]).unwrap();
        assert_eq!((e.rmse, e.mae), (0.0, 0.0));
        let e = evaluate_normals(&a, &b, &[true, true]).unwrap();
        assert!((e.rmse - 2.0).abs() < 1e-12 && (e.mae - 2.0).abs() < 1e-12);
        assert!((e.mean_angle_deg - 180.0).abs() < 1e-9);
        assert!(evaluate_normals(&a, &b, &[false, false]).is_err());
    }
}
