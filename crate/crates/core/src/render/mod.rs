//! Differentiable confocal transient rendering, background compositing and
//! directional-albedo views.

mod background;
mod sampling;
mod transient;
mod view;

pub use background::{composite_background, composite_background_tape, MIN_BACKGROUND_SUM};
pub use sampling::{attenuation, density_from_sdf, direction, sample_sphere_point, SphereSampleGrid};
pub use transient::{
    render_transient, render_transient_values, sample_layout, AnalyticField, RadialBins, RenderError, RenderOptions,
    RenderedTransient, SampleLayout, TapeField,
};
pub use view::{render_view, Camera, Projection};
