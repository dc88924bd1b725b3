//! Transients, wall geometry, scene bounds, configuration and the `.nlt`
//! file format.

mod config;
mod geometry;
mod nlt;
mod transient;

pub use config::{
    Config, ConfigError, LossWeights, NetworkConfig, OptimizerConfig, Precision, SamplingConfig, WeightMode,
    ZeroLossNorm,
};
pub use geometry::{tangent_frame, SceneBounds, Vec3, SPEED_OF_LIGHT};
pub use nlt::{decode_transients, encode_transients, load_transients, save_transients, NltError, NLT_VERSION};
pub use transient::{
    bin_to_radius, compute_object_mask, mask_row, radial_step, DataError, ObjectMask, TransientVolume, WallGrid,
};
