//! Synthetic confocal transients from analytic scenes.

mod hard;
mod mix;
mod scene;
mod soft;

pub use hard::{simulate_transients, SimError, SimOptions, Simulation};
pub use mix::{add_background, add_noise, BackgroundMix};
pub use scene::{analytic_sdf, Floor, Hit, Primitive, SceneError, SceneSpec};
pub use soft::{simulate_transients_soft, soft_transient, SoftOptions};
