//! Training objectives and the surface-point sampling that feeds the
//! zero-distance term.
//!
//! Every objective has a plain `f64` form and a taped form; the taped forms
//! are what training differentiates, the plain ones are used for reporting
//! and checks.

mod log;
mod terms;

pub use self::log::{LossLog, CSV_HEADER};
pub use terms::{
    binary_entropy, eikonal_tape, entropy_tape, free_space_tape, loss_eikonal, loss_entropy, loss_free_space, loss_tau,
    loss_z, mask_loss, sample_free_voxels, sample_surface_cells, sample_surface_points, squared_error_tape,
    uniform_points, weighted_total_tape, zero_tape, LossBreakdown, LossError, ENTROPY_EPS, GRAD_NORM_FLOOR,
};
