use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::trace::{trace_limited, TraceHit, TraceOptions};
use super::ExtractError;
use crate::data::{SceneBounds, Vec3};
use crate::fields::{sdf_grads, SdfField};
use crate::image::Image;
use crate::render::Camera;

/// Binary per-pixel mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Intersection over union; 1 for two empty masks.
    pub fn iou(&self, other: &PixelMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// 0/1 image.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| b as u8 as f64).collect(),
        }
    }
}

/// Pixels whose albedo exceeds `fraction` of the image maximum.
pub fn object_mask_from_albedo(albedo: &Image, fraction: f64) -> Result<PixelMask, ExtractError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ExtractError::Invalid(format!(
            "mask fraction must be in (0, 1), got {fraction}"
        )));
    }
    let cut = fraction * albedo.max_finite();
    Ok(PixelMask {
        width: albedo.width,
        height: albedo.height,
        data: albedo.data.iter().map(|&v| v > cut && v.is_finite()).collect(),
    })
}

/// Depths along camera rays; non-hits are stored as `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub camera: Camera,
    pub depth: Image,
}

impl DepthMap {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.depth.data[index].is_finite()
    }

    pub fn valid_count(&self) -> usize {
        self.depth.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn valid_mask(&self) -> PixelMask {
        PixelMask {
            width: self.width(),
            height: self.height(),
            data: self.depth.data.iter().map(|v| v.is_finite()).collect(),
        }
    }
}

/// Sphere-tracing result for every pixel of a camera.
#[derive(Clone, Debug)]
pub struct TracedView {
    pub camera: Camera,
    /// Row-major; `t` is measured from the camera ray origin.
    pub hits: Vec<Option<TraceHit>>,
}

impl TracedView {
    pub fn depth_map(&self) -> DepthMap {
        let mut depth = Image::new(self.camera.width, self.camera.height);
        for (v, h) in depth.data.iter_mut().zip(&self.hits) {
            *v = h.map_or(f64::INFINITY, |h| h.t);
        }
        DepthMap {
            camera: self.camera,
            depth,
        }
    }
}

fn check_mask(camera: &Camera, mask: Option<&PixelMask>) -> Result<(), ExtractError> {
    if let Some(m) = mask {
        if m.width != camera.width || m.height != camera.height {
            return Err(ExtractError::Shape {
                expected: (camera.height, camera.width),
                got: (m.height, m.width),
            });
        }
    }
    Ok(())
}

/// Trace the pixels of `camera` selected by `mask` (all when `None`) through
/// the part of `bounds` each ray crosses.
pub fn trace_view(
    field: &dyn SdfField,
    camera: &Camera,
    bounds: &SceneBounds,
    mask: Option<&PixelMask>,
    opts: &TraceOptions,
) -> Result<TracedView, ExtractError> {
    check_mask(camera, mask)?;
    let n = camera.width * camera.height;
    let mut rays = Vec::new();
    let mut owners = Vec::new();
    for idx in 0..n {
        if mask.is_some_and(|m| !m.data[idx]) {
            continue;
        }
        let (o, d) = camera.ray(idx / camera.width, idx % camera.width);
        if let Some((t0, t1)) = bounds.ray_interval(&o, &d) {
            rays.push((o + d * t0, d, t1 - t0));
            owners.push((idx, t0));
        }
    }
    let traced = trace_limited(field, &rays, opts)?;
    let mut hits = vec![None; n];
    for (&(idx, t0), h) in owners.iter().zip(traced) {
        hits[idx] = h.map(|h| TraceHit { t: t0 + h.t, ..h });
    }
    Ok(TracedView { camera: *camera, hits })
}

/// Hit points with unit normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Source pixel of each point (row-major index).
    pub pixels: Vec<usize>,
}

impl OrientedPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// ASCII PLY with `x y z nx ny nz` vertex properties.
    pub fn to_ply(&self) -> String {
        let mut s = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property float nx\nproperty float ny\nproperty float nz\nend_header\n",
            self.len()
        );
        for (p, n) in self.points.iter().zip(&self.normals) {
            let v = [p.x, p.y, p.z, n.x, n.y, n.z].map(|x| x as f32);
            writeln!(s, "{} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
        }
        s
    }

    /// Parse the output of [`to_ply`](Self::to_ply); pixel indices are not
    /// stored in the file.
    pub fn from_ply(text: &str) -> Result<Self, ExtractError> {
        let bad = |m: &str| ExtractError::Ply(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("ply") {
            return Err(bad("missing ply magic"));
        }
        let mut count = None;
        let mut props = Vec::new();
        loop {
            let line = lines.next().ok_or_else(|| bad("missing end_header"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["end_header"] => break,
                ["format", "ascii", _] | ["comment", ..] => {}
                ["format", ..] => return Err(bad("only ascii PLY is supported")),
                ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
                ["property", _, name] => props.push(name.to_string()),
                _ => return Err(bad(&format!("unexpected header line {line:?}"))),
            }
        }
        if props != ["x", "y", "z", "nx", "ny", "nz"] {
            return Err(bad("expected properties x y z nx ny nz"));
        }
        let n = count.ok_or_else(|| bad("no vertex element"))?;
        let mut cloud = OrientedPointCloud::default();
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad vertex value"))?;
            if v.len() != 6 {
                return Err(bad("vertex needs six values"));
            }
            cloud.points.push(Vec3::new(v[0], v[1], v[2]));
            cloud.normals.push(Vec3::new(v[3], v[4], v[5]));
        }
        Ok(cloud)
    }

    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<(), ExtractError> {
        fs::write(path, self.to_ply())?;
        Ok(())
    }

    pub fn read_ply(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        Self::from_ply(&fs::read_to_string(path)?)
    }
}

/// Trace the masked pixels and attach normalized finite-difference
/// gradients (step `normal_eps`) as normals. Points whose gradient vanishes
/// are dropped.
pub fn extract_point_cloud(
    field: &dyn SdfField,
    camera: &Camera,
    bounds: &SceneBounds,
    mask: &PixelMask,
    opts: &TraceOptions,
    normal_eps: f64,
) -> Result<OrientedPointCloud, ExtractError> {
    if !(normal_eps > 0.0) {
        return Err(ExtractError::Invalid(format!(
            "normal step must be positive, got {normal_eps}"
        )));
    }
    let view = trace_view(field, camera, bounds, Some(mask), opts)?;
    Ok(cloud_from_view(field, &view, normal_eps))
}

/// Point cloud from an existing trace.
pub fn cloud_from_view(field: &dyn SdfField, view: &TracedView, normal_eps: f64) -> OrientedPointCloud {
    let (pixels, points): (Vec<usize>, Vec<Vec3>) = view
        .hits
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|h| (i, h.point)))
        .unzip();
    let grads = sdf_grads(field, &points, normal_eps);
    let mut cloud = OrientedPointCloud::default();
    for ((px, p), g) in pixels.into_iter().zip(points).zip(grads) {
        let n = g.norm();
        if n > 0.0 && n.is_finite() {
            cloud.points.push(p);
            cloud.normals.push(g / n);
            cloud.pixels.push(px);
        }
    }
    cloud
}
