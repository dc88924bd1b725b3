//! Surface extraction by sphere tracing, object masks, oriented point clouds
//! and reconstruction metrics.

mod cloud;
mod eval;
mod trace;

use std::io;

use thiserror::Error;

pub use cloud::{
    cloud_from_view, extract_point_cloud, object_mask_from_albedo, trace_view, DepthMap, OrientedPointCloud, PixelMask,
    TracedView,
};
pub use eval::{
    analytic_depth, analytic_normal, angle_between, end_point_from_angle, evaluate_depth, evaluate_normals,
    paired_normals, DepthErrors, NormalErrors,
};
pub use trace::{sphere_trace, sphere_trace_many, TraceHit, TraceOptions};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("vector {index} is not unit length (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("expected a {expected:?} (rows, cols) grid, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("no pixel is valid in both maps")]
    EmptyOverlap,
    #[error("malformed PLY: {0}")]
    Ply(String),
}
